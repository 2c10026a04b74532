use super::tensor::{l2_normalize, l2_normalize_backward, matmul, matmul_nt, matmul_tn, sigmoid};
use super::{NumError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise primitives available through [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Log,
    Exp,
    Scale(f64),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Scale(Var, f64),
    L2Normalize(Var),
    Sum(Var),
    Mean(Var),
    /// Scalar produced outside the tape with known partials for each input.
    External(Vec<(Var, Tensor)>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive ops in execution order for reverse-mode differentiation.
///
/// Nodes are appended as ops run, so the node list is already topologically
/// sorted; `backward` walks it once in reverse.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = matmul(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumError> {
        let (m, n) = self.value(a).dims2()?;
        let b = self.value(bias);
        if b.len() != n {
            return Err(NumError::ShapeMismatch {
                op: "add_row",
                left: self.value(a).shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let mut value = self.value(a).clone();
        let bias_data = b.data().to_vec();
        for r in 0..m {
            for (x, bv) in value.data_mut()[r * n..(r + 1) * n].iter_mut().zip(&bias_data) {
                *x += bv;
            }
        }
        let rg = self.needs(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.needs(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.needs(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Natural log; inputs must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var, NumError> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(NumError::Domain {
                op: "log",
                value: *bad,
            });
        }
        let value = self.value(a).map(f64::ln);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Log(a), rg))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.needs(&[a]);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var, NumError> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(NumError::Arity {
                op: "elementwise",
                expected: arity,
                got: args.len(),
            });
        }
        match op {
            Elementwise::Add => self.add(args[0], args[1]),
            Elementwise::Sub => self.sub(args[0], args[1]),
            Elementwise::Mul => self.mul(args[0], args[1]),
            Elementwise::Relu => Ok(self.relu(args[0])),
            Elementwise::Sigmoid => Ok(self.sigmoid(args[0])),
            Elementwise::Log => self.log(args[0]),
            Elementwise::Exp => Ok(self.exp(args[0])),
            Elementwise::Scale(c) => Ok(self.scale(args[0], c)),
        }
    }

    /// Row-wise L2 normalization (a vector is a single row).
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var, NumError> {
        let value = l2_normalize(self.value(a))?;
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::L2Normalize(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.needs(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        let rg = self.needs(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Records a scalar computed elsewhere together with its partial
    /// derivatives with respect to `inputs`.
    pub fn external_scalar(
        &mut self,
        value: f64,
        partials: Vec<(Var, Tensor)>,
    ) -> Result<Var, NumError> {
        for (var, grad) in &partials {
            if self.value(*var).shape() != grad.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "external_scalar",
                    left: self.value(*var).shape().to_vec(),
                    right: grad.shape().to_vec(),
                });
            }
        }
        let vars: Vec<Var> = partials.iter().map(|(v, _)| *v).collect();
        let rg = self.needs(&vars);
        Ok(self.push(Tensor::scalar(value), Op::External(partials), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(NumError::NotScalar {
                shape: root.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(root.shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        let ga = matmul_nt(&g, self.value(*b));
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].requires_grad {
                        let gb = matmul_tn(self.value(*a), &g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    self.send(&mut grads, *b, || g.clone());
                    self.send(&mut grads, *a, || g.clone());
                }
                Op::Sub(a, b) => {
                    self.send(&mut grads, *b, || g.map(|x| -x));
                    self.send(&mut grads, *a, || g.clone());
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    self.send(&mut grads, *a, || g.zip_map(vb, |x, y| x * y).unwrap());
                    self.send(&mut grads, *b, || g.zip_map(va, |x, y| x * y).unwrap());
                }
                Op::AddRow(a, bias) => {
                    self.send(&mut grads, *bias, || {
                        let n = self.value(*bias).len();
                        let mut gb = Tensor::zeros(self.value(*bias).shape().to_vec());
                        for row in g.data().chunks(n) {
                            for (acc, x) in gb.data_mut().iter_mut().zip(row) {
                                *acc += x;
                            }
                        }
                        gb
                    });
                    self.send(&mut grads, *a, || g.clone());
                }
                Op::Relu(a) => {
                    let va = self.value(*a);
                    self.send(&mut grads, *a, || {
                        g.zip_map(va, |x, v| if v > 0.0 { x } else { 0.0 }).unwrap()
                    });
                }
                Op::Sigmoid(a) => {
                    let out = &node.value;
                    self.send(&mut grads, *a, || {
                        g.zip_map(out, |x, s| x * s * (1.0 - s)).unwrap()
                    });
                }
                Op::Log(a) => {
                    let va = self.value(*a);
                    self.send(&mut grads, *a, || g.zip_map(va, |x, v| x / v).unwrap());
                }
                Op::Exp(a) => {
                    let out = &node.value;
                    self.send(&mut grads, *a, || g.zip_map(out, |x, e| x * e).unwrap());
                }
                Op::Scale(a, c) => {
                    self.send(&mut grads, *a, || g.map(|x| x * c));
                }
                Op::L2Normalize(a) => {
                    let va = self.value(*a);
                    self.send(&mut grads, *a, || l2_normalize_backward(va, &node.value, &g));
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    let shape = self.value(*a).shape().to_vec();
                    self.send(&mut grads, *a, || Tensor::full(shape, gv));
                }
                Op::Mean(a) => {
                    let va = self.value(*a);
                    let gv = g.data()[0] / va.len() as f64;
                    self.send(&mut grads, *a, || Tensor::full(va.shape().to_vec(), gv));
                }
                Op::External(partials) => {
                    let gv = g.data()[0];
                    for (var, partial) in partials.iter().rev() {
                        self.send(&mut grads, *var, || partial.map(|x| x * gv));
                    }
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn send(&self, grads: &mut [Option<Tensor>], to: Var, make: impl FnOnce() -> Tensor) {
        if self.nodes[to.0].requires_grad {
            accumulate(grads, to, make());
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], to: Var, g: Tensor) {
    match &mut grads[to.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
