//! LSTM predictor and selector networks.
//!
//! Both networks read, at each step, the observed vector with unobserved
//! slots set to the sentinel `0.0`, concatenated with the 0/1 observation
//! mask. The recurrent cell carries the history; a dense head maps the
//! hidden state to the output (label estimate for the predictor, per-feature
//! measurement probabilities for the selector).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Checkpoint, NodeRef, ParamRecord, RealArray, Tape};
use crate::error::{Error, Result};

/// Selector probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-6;

const CE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

impl Task {
    pub fn output_dim(self) -> usize {
        match self {
            Task::Regression => 1,
            Task::Classification { classes } => classes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    Zeros,
    UniformScaled,
}

/// Sizes shared by both networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Number of feature streams `d`; the cell input has `2d` entries.
    pub features: usize,
    pub hidden: usize,
    /// Dense layers in the output head; extra layers are `hidden` wide with tanh.
    pub head_depth: usize,
}

impl ModelDims {
    pub fn new(features: usize, hidden: usize) -> Self {
        Self {
            features,
            hidden,
            head_depth: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.features == 0 || self.hidden == 0 || self.head_depth == 0 {
            return Err(Error::InvalidArgument(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: RealArray,
    pub bias: RealArray,
}

impl Dense {
    fn init(inputs: usize, outputs: usize, scheme: InitScheme, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: init_matrix(outputs, inputs, scheme, rng),
            bias: RealArray::zeros(&[outputs]),
        }
    }
}

/// Gate order along the `4h` axis: input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub w_input: RealArray,
    pub w_hidden: RealArray,
    pub bias: RealArray,
}

impl LstmCellParams {
    fn init(features: usize, hidden: usize, scheme: InitScheme, rng: &mut ChaCha8Rng) -> Self {
        let mut bias = RealArray::zeros(&[4 * hidden]);
        if scheme == InitScheme::UniformScaled {
            for v in &mut bias.data_mut()[hidden..2 * hidden] {
                *v = 1.0;
            }
        }
        Self {
            w_input: init_matrix(4 * hidden, 2 * features, scheme, rng),
            w_hidden: init_matrix(4 * hidden, hidden, scheme, rng),
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.w_input.shape()[1] / 2
    }
}

fn init_matrix(rows: usize, cols: usize, scheme: InitScheme, rng: &mut ChaCha8Rng) -> RealArray {
    match scheme {
        InitScheme::Zeros => RealArray::zeros(&[rows, cols]),
        InitScheme::UniformScaled => {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
            RealArray::matrix(rows, cols, data).expect("sized above")
        }
    }
}

/// Access to a model's trainable arrays in a fixed order.
pub trait Parameterized {
    fn named_params(&self) -> Vec<(String, &RealArray)>;
    fn params_mut(&mut self) -> Vec<&mut RealArray>;

    fn param_names(&self) -> Vec<String> {
        self.named_params().into_iter().map(|(n, _)| n).collect()
    }

    fn param_arrays(&self) -> Vec<&RealArray> {
        self.named_params().into_iter().map(|(_, a)| a).collect()
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, a)| a.len()).sum()
    }

    /// All parameters concatenated in `named_params` order.
    fn flat_params(&self) -> Vec<f64> {
        self.named_params()
            .into_iter()
            .flat_map(|(_, a)| a.data().to_vec())
            .collect()
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.param_count();
        if flat.len() != total {
            return Err(Error::Dimension(format!(
                "expected {total} parameters, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

fn cell_params<'a>(cell: &'a LstmCellParams, head: &'a [Dense]) -> Vec<(String, &'a RealArray)> {
    let mut out = vec![
        ("cell.w_input".to_string(), &cell.w_input),
        ("cell.w_hidden".to_string(), &cell.w_hidden),
        ("cell.bias".to_string(), &cell.bias),
    ];
    for (i, layer) in head.iter().enumerate() {
        out.push((format!("head.{i}.weight"), &layer.weight));
        out.push((format!("head.{i}.bias"), &layer.bias));
    }
    out
}

fn cell_params_mut<'a>(cell: &'a mut LstmCellParams, head: &'a mut [Dense]) -> Vec<&'a mut RealArray> {
    let mut out = vec![&mut cell.w_input, &mut cell.w_hidden, &mut cell.bias];
    for layer in head.iter_mut() {
        out.push(&mut layer.weight);
        out.push(&mut layer.bias);
    }
    out
}

fn init_head(dims: &ModelDims, outputs: usize, scheme: InitScheme, rng: &mut ChaCha8Rng) -> Vec<Dense> {
    let mut head = Vec::with_capacity(dims.head_depth);
    for _ in 1..dims.head_depth {
        head.push(Dense::init(dims.hidden, dims.hidden, scheme, rng));
    }
    head.push(Dense::init(dims.hidden, outputs, scheme, rng));
    head
}

/// Label estimator `f_phi`: LSTM state `H_t` and a dense head.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorModel {
    pub cell: LstmCellParams,
    pub head: Vec<Dense>,
    pub task: Task,
    pub dims: ModelDims,
}

/// Measurement policy `f_theta`: LSTM state `h_t` and a sigmoid head giving
/// one probability per feature.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorModel {
    pub cell: LstmCellParams,
    pub head: Vec<Dense>,
    pub dims: ModelDims,
}

impl PredictorModel {
    pub fn init(dims: ModelDims, task: Task, seed: u64, scheme: InitScheme) -> Result<Self> {
        dims.validate()?;
        if let Task::Classification { classes } = task {
            if classes < 2 {
                return Err(Error::InvalidArgument(format!(
                    "classification needs at least 2 classes, got {classes}"
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = LstmCellParams::init(dims.features, dims.hidden, scheme, &mut rng);
        let head = init_head(&dims, task.output_dim(), scheme, &mut rng);
        Ok(Self { cell, head, task, dims })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundNet {
        BoundNet::bind(tape, &self.cell, &self.head)
    }

    /// One step outside of training: returns the new state and `f_phi` output.
    pub fn step(&self, state: &HiddenState, mask: &[bool], values: &[f64]) -> Result<(HiddenState, Vec<f64>)> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape);
        let s = state.to_tape(&mut tape);
        let (next, out) = net.predictor_step(&mut tape, &s, mask, values, self.task)?;
        Ok((HiddenState::from_tape(&tape, &next), tape.value(out).data().to_vec()))
    }
}

impl SelectorModel {
    pub fn init(dims: ModelDims, seed: u64, scheme: InitScheme) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = LstmCellParams::init(dims.features, dims.hidden, scheme, &mut rng);
        let head = init_head(&dims, dims.features, scheme, &mut rng);
        Ok(Self { cell, head, dims })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundNet {
        BoundNet::bind(tape, &self.cell, &self.head)
    }

    pub fn step(&self, state: &HiddenState, mask: &[bool], values: &[f64]) -> Result<(HiddenState, Vec<f64>)> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape);
        let s = state.to_tape(&mut tape);
        let (next, out) = net.selector_step(&mut tape, &s, mask, values)?;
        Ok((HiddenState::from_tape(&tape, &next), tape.value(out).data().to_vec()))
    }
}

impl Parameterized for PredictorModel {
    fn named_params(&self) -> Vec<(String, &RealArray)> {
        cell_params(&self.cell, &self.head)
    }

    fn params_mut(&mut self) -> Vec<&mut RealArray> {
        cell_params_mut(&mut self.cell, &mut self.head)
    }
}

impl Parameterized for SelectorModel {
    fn named_params(&self) -> Vec<(String, &RealArray)> {
        cell_params(&self.cell, &self.head)
    }

    fn params_mut(&mut self) -> Vec<&mut RealArray> {
        cell_params_mut(&mut self.cell, &mut self.head)
    }
}

/// Plain-value LSTM state `(h, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl HiddenState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }

    pub fn to_tape(&self, tape: &mut Tape) -> TapeState {
        TapeState {
            h: tape.constant(RealArray::vector(self.h.clone())),
            c: tape.constant(RealArray::vector(self.c.clone())),
        }
    }

    pub fn from_tape(tape: &Tape, s: &TapeState) -> Self {
        Self {
            h: tape.value(s.h).data().to_vec(),
            c: tape.value(s.c).data().to_vec(),
        }
    }
}

/// LSTM state living on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TapeState {
    pub h: NodeRef,
    pub c: NodeRef,
}

/// A network's parameters registered as leaves on one tape.
#[derive(Clone, Debug)]
pub struct BoundNet {
    w_input: NodeRef,
    w_hidden: NodeRef,
    bias: NodeRef,
    head: Vec<(NodeRef, NodeRef)>,
    hidden: usize,
    features: usize,
}

impl BoundNet {
    fn bind(tape: &mut Tape, cell: &LstmCellParams, head: &[Dense]) -> Self {
        let w_input = tape.param(cell.w_input.clone());
        let w_hidden = tape.param(cell.w_hidden.clone());
        let bias = tape.param(cell.bias.clone());
        let head = head
            .iter()
            .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
            .collect();
        Self {
            w_input,
            w_hidden,
            bias,
            head,
            hidden: cell.hidden(),
            features: cell.features(),
        }
    }

    /// Parameter leaves in `Parameterized::named_params` order.
    pub fn param_nodes(&self) -> Vec<NodeRef> {
        let mut out = vec![self.w_input, self.w_hidden, self.bias];
        for (w, b) in &self.head {
            out.push(*w);
            out.push(*b);
        }
        out
    }

    pub fn initial_state(&self, tape: &mut Tape) -> TapeState {
        HiddenState::zeros(self.hidden).to_tape(tape)
    }

    fn cell_step(&self, tape: &mut Tape, prev: &TapeState, mask: &[bool], values: &[f64]) -> Result<TapeState> {
        if mask.len() != self.features || values.len() != self.features {
            return Err(Error::Dimension(format!(
                "network expects {} features, got values {} / mask {}",
                self.features,
                values.len(),
                mask.len()
            )));
        }
        let mut input = Vec::with_capacity(2 * self.features);
        input.extend(values.iter().zip(mask).map(|(&v, &m)| if m { v } else { 0.0 }));
        input.extend(mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
        let x = tape.constant(RealArray::vector(input));

        let out = tape.lstm_cell(self.w_input, x, self.w_hidden, prev.h, self.bias, prev.c)?;
        let h = tape.slice(out, 0, self.hidden)?;
        let c = tape.slice(out, self.hidden, self.hidden)?;
        Ok(TapeState { h, c })
    }

    fn head_forward(&self, tape: &mut Tape, h: NodeRef) -> Result<NodeRef> {
        let mut act = h;
        let last = self.head.len() - 1;
        for (k, (w, b)) in self.head.iter().enumerate() {
            let z = tape.matmul(*w, act)?;
            let z = tape.add(z, *b)?;
            act = if k < last { tape.tanh(z)? } else { z };
        }
        Ok(act)
    }

    /// `H_t = f_1(H_{t-1}, s_t, x(s_t))`, output `f_2(H_t)`.
    pub fn predictor_step(
        &self,
        tape: &mut Tape,
        prev: &TapeState,
        mask: &[bool],
        values: &[f64],
        task: Task,
    ) -> Result<(TapeState, NodeRef)> {
        let state = self.cell_step(tape, prev, mask, values)?;
        let logits = self.head_forward(tape, state.h)?;
        let out = match task {
            Task::Regression => logits,
            Task::Classification { .. } => tape.softmax(logits)?,
        };
        Ok((state, out))
    }

    /// `h_t = f_3(h_{t-1}, s_t, x(s_t))`, output clamped `sigmoid(f_4(h_t))`.
    pub fn selector_step(
        &self,
        tape: &mut Tape,
        prev: &TapeState,
        mask: &[bool],
        values: &[f64],
    ) -> Result<(TapeState, NodeRef)> {
        let state = self.cell_step(tape, prev, mask, values)?;
        let logits = self.head_forward(tape, state.h)?;
        let p = tape.sigmoid(logits)?;
        let p = tape.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
        Ok((state, p))
    }
}

/// Per-step loss as a tape node: squared error or cross-entropy.
pub fn prediction_loss_node(tape: &mut Tape, prediction: NodeRef, y: f64, task: Task) -> Result<NodeRef> {
    match task {
        Task::Regression => {
            let target = tape.constant(RealArray::vector(vec![-y]));
            let diff = tape.add(prediction, target)?;
            let sq = tape.square(diff)?;
            tape.sum(sq)
        }
        Task::Classification { classes } => {
            let class = class_index(y, classes)?;
            let p = tape.slice(prediction, class, 1)?;
            let p = tape.clamp(p, CE_FLOOR, 1.0)?;
            let lp = tape.log(p)?;
            let lp = tape.sum(lp)?;
            tape.negate(lp)
        }
    }
}

/// Per-step loss on plain values.
pub fn prediction_loss(prediction: &[f64], y: f64, task: Task) -> Result<f64> {
    if prediction.len() != task.output_dim() {
        return Err(Error::Dimension(format!(
            "prediction has {} entries, task needs {}",
            prediction.len(),
            task.output_dim()
        )));
    }
    match task {
        Task::Regression => Ok((y - prediction[0]).powi(2)),
        Task::Classification { classes } => {
            let class = class_index(y, classes)?;
            Ok(-prediction[class].clamp(CE_FLOOR, 1.0).ln())
        }
    }
}

/// Validate a class label stored as a real number.
pub fn class_index(y: f64, classes: usize) -> Result<usize> {
    if y.fract() != 0.0 || y < 0.0 || y >= classes as f64 {
        return Err(Error::LabelOutOfRange { label: y, classes });
    }
    Ok(y as usize)
}

/// Architecture record stored alongside parameters in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub role: String,
    pub dims: ModelDims,
    pub task: Option<Task>,
}

fn records(named: Vec<(String, &RealArray)>) -> Vec<ParamRecord> {
    named.into_iter().map(|(n, a)| ParamRecord::from_array(n, a)).collect()
}

fn load_into<M: Parameterized>(model: &mut M, ck: &Checkpoint<ModelMeta>) -> Result<()> {
    let shapes: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, a)| (n, a.shape().to_vec()))
        .collect();
    for ((name, shape), slot) in shapes.iter().zip(model.params_mut()) {
        *slot = ck.array(name, shape)?;
    }
    Ok(())
}

impl PredictorModel {
    pub fn to_checkpoint(&self) -> Checkpoint<ModelMeta> {
        Checkpoint {
            metadata: ModelMeta {
                role: "predictor".into(),
                dims: self.dims,
                task: Some(self.task),
            },
            params: records(self.named_params()),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint<ModelMeta>) -> Result<Self> {
        let task = match (&*ck.metadata.role, ck.metadata.task) {
            ("predictor", Some(task)) => task,
            _ => return Err(Error::Checkpoint("not a predictor checkpoint".into())),
        };
        let mut model = Self::init(ck.metadata.dims, task, 0, InitScheme::Zeros)?;
        load_into(&mut model, ck)?;
        Ok(model)
    }
}

impl SelectorModel {
    pub fn to_checkpoint(&self) -> Checkpoint<ModelMeta> {
        Checkpoint {
            metadata: ModelMeta {
                role: "selector".into(),
                dims: self.dims,
                task: None,
            },
            params: records(self.named_params()),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint<ModelMeta>) -> Result<Self> {
        if ck.metadata.role != "selector" {
            return Err(Error::Checkpoint("not a selector checkpoint".into()));
        }
        let mut model = Self::init(ck.metadata.dims, 0, InitScheme::Zeros)?;
        load_into(&mut model, ck)?;
        Ok(model)
    }
}
