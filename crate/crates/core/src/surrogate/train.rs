use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::infer::predict_mask;
use super::{build_network, DomainInfo, MaskLoss, Role, Surrogate, SurrogateConfig, SurrogateMeta, MASK_THRESHOLD};
use crate::dataset::{Dataset, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::tensor::init::init_layer;
use crate::tensor::{
    bce_loss, masked_mse_loss, mse_loss, Adam, AdamConfig, LayerSpec, Mode, Network, PlateauScheduler, Tensor,
    TrainingRecord,
};

/// Which ambient masks the MT network is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    GroundTruth,
    /// Thresholded M-CNN predictions.
    Predicted,
}

/// Mini-batch Adam training with a plateau scheduler.
///
/// After every finished epoch the parameters are snapshotted; if a batch
/// produces a non-finite loss or gradient the network is rolled back to
/// that snapshot before the error is returned, so [`Trainer::surrogate`]
/// always yields the last good model.
pub struct Trainer<'a> {
    meta: SurrogateMeta,
    network: Network,
    adam: Adam,
    scheduler: PlateauScheduler,
    lr: f64,
    samples: Vec<&'a SampleRecord>,
    inputs: Vec<[f64; 3]>,
    masks: Option<Vec<Vec<u8>>>,
    rng: ChaCha8Rng,
    last_good: Vec<f64>,
}

impl<'a> Trainer<'a> {
    /// `network` must have the layer stack of `build_network(config, role)`.
    pub fn new(
        dataset: &'a Dataset,
        config: &SurrogateConfig,
        role: Role,
        network: Network,
        mask_override: Option<Vec<Vec<u8>>>,
    ) -> Result<Self> {
        config.check_crop(&dataset.manifest.crop)?;
        if network.spec() != &build_network(config, role)? {
            return Err(Error::Config(format!("initial network does not match the {role:?} layer stack")));
        }
        let samples: Vec<&SampleRecord> = dataset.split(Split::Train).collect();
        if samples.is_empty() {
            return Err(Error::Config("the dataset has no training samples".into()));
        }
        let ranges = dataset.input_ranges()?;
        let case = &dataset.manifest.cases[0];
        let meta = SurrogateMeta {
            role,
            config: config.clone(),
            history: Vec::new(),
            input_ranges: ranges,
            normalization: dataset.manifest.normalization,
            crop: dataset.manifest.crop,
            material: dataset.material()?.clone(),
            domain: DomainInfo {
                grid: case.grid,
                cell_size: case.cell_size,
                beam_start: case.beam_start,
            },
        };
        let inputs = samples.iter().map(|r| ranges.normalize(&r.meta.point)).collect();
        let adam = Adam::new(
            AdamConfig {
                learning_rate: config.learning_rate,
                epsilon: config.adam_epsilon,
                ..Default::default()
            },
            network.params(),
        );
        Ok(Trainer {
            meta,
            last_good: network.flat_params(),
            network,
            adam,
            scheduler: PlateauScheduler::new(config.scheduler_factor, config.scheduler_patience, config.min_learning_rate),
            lr: config.learning_rate,
            samples,
            inputs,
            masks: mask_override,
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed)),
        })
    }

    pub fn history(&self) -> &[TrainingRecord] {
        &self.meta.history
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn surrogate(&self) -> Surrogate {
        Surrogate {
            meta: self.meta.clone(),
            network: self.network.clone(),
        }
    }

    fn mask_of(&self, i: usize) -> &[u8] {
        match &self.masks {
            Some(m) => &m[i],
            None => &self.samples[i].mask,
        }
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Tensor, Tensor)> {
        let dims = self.meta.crop.window;
        let shape = [idx.len(), 1, dims[0], dims[1], dims[2]];
        let x: Vec<f64> = idx.iter().flat_map(|&i| self.inputs[i]).collect();
        let (target, mask): (Vec<f64>, Vec<f64>) = match self.meta.role {
            Role::M => (
                idx.iter()
                    .flat_map(|&i| self.samples[i].mask.iter().map(|&m| f64::from(m)))
                    .collect(),
                Vec::new(),
            ),
            Role::T => (
                idx.iter()
                    .flat_map(|&i| self.samples[i].field.iter().map(|&v| f64::from(v)))
                    .collect(),
                Vec::new(),
            ),
            Role::Mt => (
                idx.iter()
                    .flat_map(|&i| self.samples[i].field.iter().map(|&v| f64::from(v)))
                    .collect(),
                idx.iter()
                    .flat_map(|&i| self.mask_of(i).iter().map(|&m| f64::from(m)))
                    .collect(),
            ),
        };
        let mask = if mask.is_empty() {
            Tensor::scalar(0.0)
        } else {
            Tensor::new(&shape, mask)?
        };
        Ok((Tensor::new(&[idx.len(), 3], x)?, Tensor::new(&shape, target)?, mask))
    }

    fn rollback(&mut self, epoch: usize, loss: f64) -> Error {
        self.network
            .set_flat_params(&self.last_good)
            .expect("snapshot has the network's size");
        Error::Diverged { epoch, loss }
    }

    /// One pass over the training split in a seeded random order.
    pub fn run_epoch(&mut self) -> Result<TrainingRecord> {
        let epoch = self.meta.history.len() + 1;
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut total, mut counted, mut skipped) = (0.0, 0usize, 0usize);
        for idx in order.chunks(self.meta.config.batch_size) {
            let (x, target, mask) = self.batch(idx)?;
            self.network.zero_grad();
            let pred = self.network.forward(&x, Mode::Train)?;
            let loss = match (self.meta.role, self.meta.config.mask_loss) {
                (Role::T, _) | (Role::M, MaskLoss::Mse) => mse_loss(&pred, &target)?,
                (Role::M, MaskLoss::Bce) => bce_loss(&pred, &target)?,
                (Role::Mt, _) => masked_mse_loss(&pred, &target, &mask)?,
            };
            if !loss.value.is_finite() {
                return Err(self.rollback(epoch, loss.value));
            }
            self.network.backward(&loss)?;
            if let Err(e) = self.adam.step(self.network.params_mut()) {
                log::error!("epoch {epoch}: {e}");
                return Err(self.rollback(epoch, f64::NAN));
            }
            let contributing = idx.len() - loss.skipped;
            total += loss.value * contributing as f64;
            counted += contributing;
            skipped += loss.skipped;
        }
        if skipped > 0 {
            log::warn!("epoch {epoch}: {skipped} fully masked samples contributed no loss");
        }
        let mean_loss = if counted > 0 { total / counted as f64 } else { 0.0 };
        let record = TrainingRecord {
            epoch,
            mean_loss,
            learning_rate: self.lr,
        };
        self.lr = self.scheduler.step(mean_loss, self.lr);
        self.adam.set_learning_rate(self.lr);
        self.last_good = self.network.flat_params();
        self.meta.history.push(record);
        Ok(record)
    }

    /// Train until `max_epochs` or until the learning rate hits its floor.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&TrainingRecord)) -> Result<()> {
        while self.meta.history.len() < self.meta.config.max_epochs {
            let rec = self.run_epoch()?;
            on_epoch(&rec);
            if self.scheduler.at_floor(self.lr) {
                log::info!("learning rate reached its floor after epoch {}", rec.epoch);
                break;
            }
        }
        Ok(())
    }
}

fn check_transfer(config: &SurrogateConfig, from: &Surrogate) -> Result<()> {
    let c = &from.meta.config;
    if (c.coarse, c.channels, c.stages) != (config.coarse, config.channels, config.stages) {
        return Err(Error::Config(format!(
            "cannot transfer weights from a {:?} model with coarse {:?}, {} channels, {} stages",
            from.role(),
            c.coarse,
            c.channels,
            c.stages
        )));
    }
    Ok(())
}

/// Initial M network: the T weights with the final convolution re-drawn.
pub fn masker_init(config: &SurrogateConfig, t: &Surrogate) -> Result<Network> {
    let spec = build_network(config, Role::M)?;
    if !config.transfer_weights {
        return Network::init(spec, config.seed);
    }
    check_transfer(config, t)?;
    let mut params = t.network.params().to_vec();
    let last = spec
        .layers
        .iter()
        .rev()
        .find(|l| matches!(l, LayerSpec::Conv3d { .. }))
        .expect("stack ends in a convolution");
    let fresh = init_layer(last, &mut ChaCha8Rng::seed_from_u64(config.seed));
    let n = params.len();
    params.splice(n - fresh.len().., fresh.into_iter().map(|mut p| {
        p.clear_grad();
        p
    }));
    let mut net = Network::new(spec, params)?;
    net.zero_grad();
    Ok(net)
}

pub fn train_tcnn(dataset: &Dataset, config: &SurrogateConfig) -> Result<Surrogate> {
    let net = Network::init(build_network(config, Role::T)?, config.seed)?;
    let mut trainer = Trainer::new(dataset, config, Role::T, net, None)?;
    trainer.run(|r| log::info!("t epoch {} loss {:.6e} lr {:.1e}", r.epoch, r.mean_loss, r.learning_rate))?;
    Ok(trainer.surrogate())
}

pub fn train_mcnn(dataset: &Dataset, config: &SurrogateConfig, t: &Surrogate) -> Result<Surrogate> {
    let net = masker_init(config, t)?;
    let mut trainer = Trainer::new(dataset, config, Role::M, net, None)?;
    trainer.run(|r| log::info!("m epoch {} loss {:.6e} lr {:.1e}", r.epoch, r.mean_loss, r.learning_rate))?;
    Ok(trainer.surrogate())
}

/// Initial MT network and, if requested, the masks it trains against.
pub fn mt_setup(
    dataset: &Dataset,
    config: &SurrogateConfig,
    m: &Surrogate,
    t: Option<&Surrogate>,
) -> Result<(Network, Option<Vec<Vec<u8>>>)> {
    if m.role() != Role::M {
        return Err(Error::Config(format!("MT training needs an M model, got {:?}", m.role())));
    }
    m.meta.config.check_crop(&dataset.manifest.crop)?;
    let spec = build_network(config, Role::Mt)?;
    let net = match t {
        Some(t) if config.transfer_weights => {
            check_transfer(config, t)?;
            let mut n = Network::new(spec, t.network.params().to_vec())?;
            n.zero_grad();
            n
        }
        _ => Network::init(spec, config.seed)?,
    };
    let masks = match config.mt_masks {
        MaskSource::GroundTruth => None,
        MaskSource::Predicted => {
            let points: Vec<_> = dataset.split(Split::Train).map(|r| r.meta.point).collect();
            let probs = predict_mask(m, &points)?;
            Some(
                probs
                    .into_iter()
                    .map(|p| p.into_iter().map(|v| u8::from(v >= MASK_THRESHOLD)).collect())
                    .collect(),
            )
        }
    };
    Ok((net, masks))
}

/// Train MT against ambient masks; `t` (if given) provides initial weights.
pub fn train_mtcnn(dataset: &Dataset, config: &SurrogateConfig, m: &Surrogate, t: Option<&Surrogate>) -> Result<Surrogate> {
    let (net, masks) = mt_setup(dataset, config, m, t)?;
    let mut trainer = Trainer::new(dataset, config, Role::Mt, net, masks)?;
    trainer.run(|r| log::info!("mt epoch {} loss {:.6e} lr {:.1e}", r.epoch, r.mean_loss, r.learning_rate))?;
    Ok(trainer.surrogate())
}
