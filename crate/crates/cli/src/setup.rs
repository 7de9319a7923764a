//! Builds models, initial weights and datasets from a configuration.

use qep_core::classical::{ElasticNetwork, IsingModel, Spring};
use qep_core::energy::{EnergyModel, Example, WeightVector};
use qep_core::qep::{self, QuantumModel};
use qep_core::qho::{QhoSpec, Readout};
use qep_core::rng::{StreamKey, StreamRng};
use qep_core::tfim::TfimSpec;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{Dist, ExperimentConfig, FieldError, Generator, ModelConfig, TaskConfig};

/// Stream of all set-up draws; training streams start at epoch 1.
pub fn setup_key(seed: u64) -> StreamKey {
    StreamKey::new(seed).child(0)
}

const INIT_STREAM: u64 = 0;
const TASK_STREAM: u64 = 1;
const TEACHER_STREAM: u64 = 2;
const DEFAULT_DISPLACEMENT_EXAMPLES: usize = 8;

#[derive(Debug, Clone)]
pub enum Model {
    Ising(IsingModel),
    Elastic(ElasticNetwork),
    Tfim(TfimSpec),
    Qho(QhoSpec),
}

impl Model {
    pub fn weight_names(&self) -> Vec<String> {
        match self {
            Model::Ising(m) => m.weight_names(),
            Model::Elastic(m) => m.weight_names(),
            Model::Tfim(m) => QuantumModel::weight_names(m),
            Model::Qho(m) => QuantumModel::weight_names(m),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Ising(m) => m.input_dim(),
            Model::Elastic(m) => m.input_dim(),
            Model::Tfim(m) => QuantumModel::input_dim(m),
            Model::Qho(m) => QuantumModel::input_dim(m),
        }
    }

    pub fn target_dim(&self) -> usize {
        match self {
            Model::Ising(m) => m.target_dim(),
            Model::Elastic(m) => m.target_dim(),
            Model::Tfim(m) => QuantumModel::target_dim(m),
            Model::Qho(m) => QuantumModel::target_dim(m),
        }
    }

    fn weights(&self, values: Vec<f64>) -> qep_core::Result<WeightVector> {
        match self {
            Model::Ising(m) => WeightVector::for_model(m, values),
            Model::Elastic(m) => WeightVector::for_model(m, values),
            Model::Tfim(m) => qep::weights_for(m, values),
            Model::Qho(m) => qep::weights_for(m, values),
        }
    }
}

/// A fully built experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: Model,
    pub weights: WeightVector,
    /// Empty when the configuration has no task section.
    pub data: Vec<Example>,
}

impl Experiment {
    /// Input and target of the first example, or zeros without a task.
    pub fn probe(&self) -> (Vec<f64>, Vec<f64>) {
        match self.data.first() {
            Some(ex) => (ex.x.clone(), ex.y.clone()),
            None => (vec![0.0; self.model.input_dim()], vec![0.0; self.model.target_dim()]),
        }
    }
}

fn pairs(p: &[[usize; 2]]) -> Vec<(usize, usize)> {
    p.iter().map(|&[a, b]| (a, b)).collect()
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|j| (j + 1..n).map(move |k| (j, k))).collect()
}

fn draw(d: Dist, count: usize, rng: &mut StreamRng) -> Vec<f64> {
    match d {
        Dist::Normal { mean, std } => {
            let n = Normal::new(mean, std).expect("validated normal");
            (0..count).map(|_| n.sample(rng)).collect()
        }
        Dist::Uniform { low, high } => (0..count).map(|_| rng.random_range(low..high)).collect(),
        Dist::Constant { value } => vec![value; count],
    }
}

fn model_error(e: qep_core::Error) -> Vec<FieldError> {
    vec![FieldError::new("model", e.to_string())]
}

fn build_model(cfg: &ModelConfig) -> qep_core::Result<Model> {
    Ok(match cfg {
        ModelConfig::ClassicalIsing(m) => {
            let edges = m.edges.as_deref().map(pairs).unwrap_or_else(|| all_pairs(m.spins));
            Model::Ising(IsingModel::new(m.spins, edges, m.input_spins.clone(), m.output_spins.clone())?.with_solver(m.solver))
        }
        ModelConfig::Elastic(m) => {
            let springs = m
                .springs
                .as_deref()
                .map(pairs)
                .unwrap_or_else(|| all_pairs(m.nodes))
                .into_iter()
                .map(|(i, j)| Spring { i, j })
                .collect();
            let mut net = ElasticNetwork::new(m.nodes, m.dim, springs, m.clamped.clone(), m.outputs.clone())?;
            if let Some(t) = m.tolerance {
                net = net.with_tolerance(t, 10_000);
            }
            Model::Elastic(net)
        }
        ModelConfig::Tfim(m) => {
            let couplings = m.couplings.as_deref().map(pairs).unwrap_or_else(|| all_pairs(m.spins));
            let spec = TfimSpec::new(m.spins, couplings, m.input_spins.clone(), m.output_spins.clone())?;
            Model::Tfim(spec.with_readout_reference(m.readout_reference)?)
        }
        ModelConfig::Qho(m) => Model::Qho(
            QhoSpec::new(
                m.masses.clone(),
                pairs(&m.springs),
                m.pinning.clone(),
                m.anchors.clone(),
                m.input_particles.clone(),
                m.readouts.clone(),
            )?
            .with_hbar(m.hbar)?,
        ),
    })
}

/// Weight values drawn from the model section's distributions.
fn draw_weights(cfg: &ModelConfig, model: &Model, key: StreamKey) -> Vec<f64> {
    let mut rng = key.rng();
    match (cfg, model) {
        (ModelConfig::ClassicalIsing(c), Model::Ising(m)) => {
            let mut v = draw(c.coupling_init, m.edges().len(), &mut rng);
            v.extend(draw(c.field_init, m.n(), &mut rng));
            v
        }
        (ModelConfig::Elastic(c), Model::Elastic(m)) => {
            let mut v = draw(c.stiffness_init, m.springs().len(), &mut rng);
            v.extend(draw(c.rest_length_init, m.springs().len(), &mut rng));
            v
        }
        (ModelConfig::Tfim(c), Model::Tfim(m)) => {
            let mut v = draw(c.coupling_init, m.couplings().len(), &mut rng);
            v.extend(draw(c.field_init, m.n(), &mut rng));
            v
        }
        (ModelConfig::Qho(c), Model::Qho(m)) => draw(c.spring_init, m.springs().len(), &mut rng),
        _ => unreachable!("model built from its own config"),
    }
}

fn explicit_weights(cfg: &ModelConfig) -> Option<&Vec<f64>> {
    match cfg {
        ModelConfig::ClassicalIsing(c) => c.weights.as_ref(),
        ModelConfig::Elastic(c) => c.weights.as_ref(),
        ModelConfig::Tfim(c) => c.weights.as_ref(),
        ModelConfig::Qho(c) => c.weights.as_ref(),
    }
}

fn bits(value: usize, count: usize) -> Vec<f64> {
    (0..count).map(|b| ((value >> b) & 1) as f64).collect()
}

/// Every input pattern of `nbits` bits, with target `+1` on odd parity and
/// `-1` on even parity, replicated to each output.
fn parity_task(model: &Model, nbits: usize, scale: f64) -> Result<Vec<Example>, Vec<FieldError>> {
    if model.input_dim() != nbits {
        return Err(vec![FieldError::new(
            "task.size",
            format!("{nbits}-bit task needs {nbits} input spins, model has {}", model.input_dim()),
        )]);
    }
    if nbits > 16 {
        return Err(vec![FieldError::new("task.size", "at most 16 bits")]);
    }
    Ok((0..1usize << nbits)
        .map(|v| {
            let b = bits(v, nbits);
            let label = if v.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
            let x = match model {
                Model::Ising(_) => b.iter().map(|&bit| 2.0 * bit - 1.0).collect(),
                _ => b.iter().map(|&bit| scale * bit).collect(),
            };
            Example { x, y: vec![label; model.target_dim()] }
        })
        .collect())
}

/// Random inputs labelled by a teacher network with weights drawn from the
/// same initial distributions.
fn displacement_task(
    cfg: &ModelConfig,
    model: &Model,
    count: usize,
    scale: f64,
    key: StreamKey,
) -> qep_core::Result<Vec<Example>> {
    let teacher = model.weights(draw_weights(cfg, model, key.child(TEACHER_STREAM)))?;
    let mut rng = key.child(TASK_STREAM).rng();
    match model {
        Model::Elastic(m) => {
            // Clamped nodes jitter around a fixed random layout.
            let d = m.dim();
            let base: Vec<f64> = (0..m.clamped().len() * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            (0..count)
                .map(|_| {
                    let x: Vec<f64> = base.iter().map(|b| b + scale * rng.random_range(-0.25..0.25)).collect();
                    let dummy = vec![0.0; m.target_dim()];
                    let eq = m.equilibrate(&teacher.values, &x, &dummy, 0.0, None)?;
                    let y = m.outputs().iter().flat_map(|&o| eq.state[o * d..(o + 1) * d].to_vec()).collect();
                    Ok(Example { x, y })
                })
                .collect()
        }
        Model::Qho(m) => (0..count)
            .map(|_| {
                let x: Vec<f64> = (0..m.input_particles().len()).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
                let dummy = vec![0.0; m.readouts().len()];
                let g = m.solve_ground_state(&teacher.values, &x, &dummy, 0.0)?;
                let y = m
                    .readouts()
                    .iter()
                    .map(|r| match *r {
                        Readout::Position { i } => g.mean[i],
                        Readout::Separation { i, j } => g.mean[i] - g.mean[j],
                    })
                    .collect();
                Ok(Example { x, y })
            })
            .collect(),
        _ => unreachable!("validated: displacement needs a continuous model"),
    }
}

fn build_task(cfg: &ExperimentConfig, task: &TaskConfig, model: &Model) -> Result<Vec<Example>, Vec<FieldError>> {
    let data = match (task.generator, &task.dataset) {
        (Some(Generator::Xor), _) => parity_task(model, 2, task.input_scale)?,
        (Some(Generator::Parity), _) => parity_task(model, task.size.unwrap_or(model.input_dim()), task.input_scale)?,
        (Some(Generator::Displacement), _) => displacement_task(
            &cfg.model,
            model,
            task.size.unwrap_or(DEFAULT_DISPLACEMENT_EXAMPLES),
            task.input_scale,
            setup_key(cfg.run.seed),
        )
        .map_err(|e| vec![FieldError::new("task", e.to_string())])?,
        (None, Some(d)) => d.clone(),
        (None, None) => unreachable!("validated"),
    };
    let mut errors = Vec::new();
    for (i, ex) in data.iter().enumerate() {
        if ex.x.len() != model.input_dim() {
            errors.push(FieldError::new(
                format!("task.dataset[{i}].x"),
                format!("expected {} inputs, got {}", model.input_dim(), ex.x.len()),
            ));
        }
        if ex.y.len() != model.target_dim() {
            errors.push(FieldError::new(
                format!("task.dataset[{i}].y"),
                format!("expected {} targets, got {}", model.target_dim(), ex.y.len()),
            ));
        }
        if let Model::Ising(_) = model {
            if ex.x.iter().chain(&ex.y).any(|&v| v != 1.0 && v != -1.0) {
                errors.push(FieldError::new(format!("task.dataset[{i}]"), "spin values must be +1 or -1"));
            }
        }
    }
    if errors.is_empty() {
        Ok(data)
    } else {
        Err(errors)
    }
}

impl Experiment {
    pub fn build(config: ExperimentConfig) -> Result<Self, Vec<FieldError>> {
        config.validate()?;
        let model = build_model(&config.model).map_err(model_error)?;
        let values = match explicit_weights(&config.model) {
            Some(v) => v.clone(),
            None => draw_weights(&config.model, &model, setup_key(config.run.seed).child(INIT_STREAM)),
        };
        let weights = model.weights(values).map_err(|e| vec![FieldError::new("model.weights", e.to_string())])?;
        let data = match &config.task {
            Some(t) => build_task(&config, t, &model)?,
            None => Vec::new(),
        };
        Ok(Experiment { config, model, weights, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text).unwrap()
    }

    #[test]
    fn xor_for_ising_uses_spins() {
        let exp = Experiment::build(cfg(
            "[model]\nkind = \"classical_ising\"\nspins = 4\ninput_spins = [0, 1]\noutput_spins = [3]\n[task]\ngenerator = \"xor\"\n[run]\nseed = 1\n",
        ))
        .unwrap();
        assert_eq!(exp.weights.len(), 10);
        assert_eq!(exp.data.len(), 4);
        assert_eq!(exp.data[0], Example { x: vec![-1.0, -1.0], y: vec![-1.0] });
        assert_eq!(exp.data[1], Example { x: vec![1.0, -1.0], y: vec![1.0] });
    }

    #[test]
    fn parity_for_tfim_scales_inputs() {
        let exp = Experiment::build(cfg(
            "[model]\nkind = \"tfim\"\nspins = 4\ninput_spins = [1, 2]\noutput_spins = [3]\nreadout_reference = 0\n[task]\ngenerator = \"parity\"\ninput_scale = 4.0\n[run]\nseed = 1\n",
        ))
        .unwrap();
        assert_eq!(exp.data[3], Example { x: vec![4.0, 4.0], y: vec![-1.0] });
    }

    #[test]
    fn input_count_mismatch_is_a_task_error() {
        let errs = Experiment::build(cfg(
            "[model]\nkind = \"tfim\"\nspins = 3\ninput_spins = [1]\noutput_spins = [2]\n[task]\ngenerator = \"xor\"\n[run]\nseed = 1\n",
        ))
        .unwrap_err();
        assert_eq!(errs[0].path, "task.size");
    }

    #[test]
    fn displacement_targets_are_realizable() {
        let exp = Experiment::build(cfg(
            "[model]\nkind = \"qho\"\nmasses = [1.0, 1.0]\nsprings = [[0, 1]]\npinning = [1.0, 0.5]\nanchors = [0.0, 1.0]\ninput_particles = [0]\nreadouts = [{ kind = \"position\", i = 1 }]\n[task]\ngenerator = \"displacement\"\nsize = 3\n[run]\nseed = 4\n",
        ))
        .unwrap();
        assert_eq!(exp.data.len(), 3);
        let Model::Qho(m) = &exp.model else { panic!() };
        // The teacher reproduces its own targets up to the variance term.
        let teacher = exp.model.weights(draw_weights(&exp.config.model, &exp.model, setup_key(4).child(TEACHER_STREAM))).unwrap();
        for ex in &exp.data {
            let g = m.solve_ground_state(&teacher.values, &ex.x, &ex.y, 0.0).unwrap();
            assert!((g.mean[1] - ex.y[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let text = "[model]\nkind = \"elastic\"\nnodes = 4\ndim = 2\nclamped = [0, 1]\noutputs = [3]\n[task]\ngenerator = \"displacement\"\n[run]\nseed = 9\n";
        let a = Experiment::build(cfg(text)).unwrap();
        let b = Experiment::build(cfg(text)).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.data, b.data);
    }
}
