//! Masked-observation acquisition environment.
//!
//! The state has `N_T + 1` columns. Column 0 is all [`FILL_VALUE`]. Action
//! column `j` decides which features to fetch and produces state column
//! `j + 1`: fetched features take `x[:, j]`, the others carry over. With
//! `reveal_current_tick` set, the value revealed is `x[:, min(j + 1, N_T - 1)]`
//! instead, removing the one-tick latency.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EpisodeData, FeatureSpec};
use crate::matrix::{ActionMatrix, FeatureMatrix};
use crate::{Error, Result, FILL_VALUE};

/// Anything that emits per-feature fetch probabilities tick by tick.
pub trait AcquisitionPolicy {
    type Memory;

    fn n_features(&self) -> usize;

    /// Per-episode memory, created before the first decision.
    fn begin(&self) -> Self::Memory;

    /// Fetch probabilities for the next action, given the newest state
    /// column and the previous action (all false before the first).
    fn probs(&self, memory: &mut Self::Memory, obs: &[f64], prev_action: &[bool], out: &mut [f64]);
}

/// Fetches every feature independently with a fixed probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy {
    pub n_features: usize,
    pub prob: f64,
}

impl AcquisitionPolicy for ConstantPolicy {
    type Memory = ();
    fn n_features(&self) -> usize {
        self.n_features
    }
    fn begin(&self) {}
    fn probs(&self, _: &mut (), _: &[f64], _: &[bool], out: &mut [f64]) {
        out.fill(self.prob);
    }
}

/// Fetches a fixed subset of features at every tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetPolicy {
    pub mask: Vec<bool>,
}

impl SubsetPolicy {
    pub fn from_indices(n_features: usize, keep: &[usize]) -> Self {
        let mut mask = vec![false; n_features];
        for &k in keep {
            mask[k] = true;
        }
        Self { mask }
    }
}

impl AcquisitionPolicy for SubsetPolicy {
    type Memory = ();
    fn n_features(&self) -> usize {
        self.mask.len()
    }
    fn begin(&self) {}
    fn probs(&self, _: &mut (), _: &[f64], _: &[bool], out: &mut [f64]) {
        for (o, &m) in out.iter_mut().zip(&self.mask) {
            *o = f64::from(u8::from(m));
        }
    }
}

#[derive(Debug, Clone)]
pub struct AcquisitionEnv<'a> {
    x: &'a FeatureMatrix,
    state: FeatureMatrix,
    t: usize,
    reveal_current_tick: bool,
}

impl<'a> AcquisitionEnv<'a> {
    /// Starts an episode; the first observation is the fill column.
    pub fn reset(episode: &'a EpisodeData, reveal_current_tick: bool) -> Self {
        let x = &episode.x;
        Self {
            x,
            state: FeatureMatrix::filled(x.n_features(), x.n_ticks() + 1, FILL_VALUE),
            t: 0,
            reveal_current_tick,
        }
    }

    pub fn observation(&self) -> &[f64] {
        self.state.col(self.t)
    }

    pub fn tick(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.t == self.x.n_ticks()
    }

    /// Applies one action column and returns the new state column.
    pub fn step(&mut self, action: &[bool]) -> Result<&[f64]> {
        if self.done() {
            return Err(Error::Shape("step called after the episode ended".into()));
        }
        if action.len() != self.x.n_features() {
            return Err(Error::Shape(format!(
                "action has {} entries, expected {}",
                action.len(),
                self.x.n_features()
            )));
        }
        let src = if self.reveal_current_tick {
            (self.t + 1).min(self.x.n_ticks() - 1)
        } else {
            self.t
        };
        let (prev, revealed) = (self.t, src);
        for (k, &a) in action.iter().enumerate() {
            let v = if a {
                self.x.get(k, revealed)
            } else {
                self.state.get(k, prev)
            };
            self.state.set(k, prev + 1, v);
        }
        self.t += 1;
        Ok(self.state.col(self.t))
    }

    pub fn into_state(self) -> FeatureMatrix {
        self.state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    /// Bernoulli draws from the policy's probabilities.
    Sample,
    /// Fetch exactly when the probability exceeds 0.5.
    #[default]
    Deterministic,
}

/// A finished episode: all `N_T + 1` state columns and the `N_T` actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub state: FeatureMatrix,
    pub actions: ActionMatrix,
}

impl Rollout {
    /// Predictor inputs aligned with the labels: state columns `1..=N_T`.
    pub fn predictor_inputs(&self) -> impl Iterator<Item = &[f64]> {
        self.state.columns().skip(1)
    }

    /// The masked episode used for predictor retraining.
    pub fn masked_episode(&self, episode: &EpisodeData) -> EpisodeData {
        let n_f = self.state.n_features();
        let cols: Vec<Vec<f64>> = self.predictor_inputs().map(<[f64]>::to_vec).collect();
        EpisodeData {
            subject_id: episode.subject_id.clone(),
            x: FeatureMatrix::from_columns(n_f, &cols),
            y: episode.y.clone(),
        }
    }
}

/// Seeds the per-episode generator: one stream per episode index, so results
/// do not depend on scheduling.
pub fn episode_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Rolls `policy` through one episode.
pub fn roll_episode<P: AcquisitionPolicy, R: Rng>(
    episode: &EpisodeData,
    policy: &P,
    mode: SynthMode,
    reveal_current_tick: bool,
    rng: &mut R,
) -> Rollout {
    let n_f = episode.n_features();
    let mut env = AcquisitionEnv::reset(episode, reveal_current_tick);
    let mut memory = policy.begin();
    let mut actions = ActionMatrix::new(n_f, episode.n_ticks());
    let mut probs = vec![0.0; n_f];
    let mut prev = vec![false; n_f];
    let mut act = vec![false; n_f];
    while !env.done() {
        policy.probs(&mut memory, env.observation(), &prev, &mut probs);
        for (a, &p) in act.iter_mut().zip(&probs) {
            *a = match mode {
                SynthMode::Sample => rng.random::<f64>() < p,
                SynthMode::Deterministic => p > 0.5,
            };
        }
        actions.col_mut(env.tick()).copy_from_slice(&act);
        env.step(&act).expect("episode length is respected");
        std::mem::swap(&mut prev, &mut act);
    }
    Rollout {
        state: env.into_state(),
        actions,
    }
}

/// Rolls a fixed policy over every episode.
pub fn synthesize_states<P>(
    episodes: &[EpisodeData],
    policy: &P,
    mode: SynthMode,
    seed: u64,
    reveal_current_tick: bool,
) -> Result<Vec<Rollout>>
where
    P: AcquisitionPolicy + Sync,
{
    if let Some(e) = episodes
        .iter()
        .find(|e| e.n_features() != policy.n_features())
    {
        return Err(Error::Shape(format!(
            "episode `{}` has {} features, policy expects {}",
            e.subject_id,
            e.n_features(),
            policy.n_features()
        )));
    }
    Ok(episodes
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            roll_episode(
                e,
                policy,
                mode,
                reveal_current_tick,
                &mut episode_rng(seed, i),
            )
        })
        .collect())
}

/// Writes fetched values in the events format plus a wide 0/1 mask sidecar
/// (`subject_id,tick,<features>`). Event times are tick indices scaled by
/// `tick_hours`.
pub fn export_rollouts(
    episodes: &[EpisodeData],
    rollouts: &[Rollout],
    specs: &[FeatureSpec],
    tick_hours: f64,
    events_path: &Path,
    mask_path: &Path,
) -> Result<()> {
    let mut events = csv::Writer::from_path(events_path)?;
    events.write_record(["subject_id", "feature_name", "time_hours", "value"])?;
    let mut mask = BufWriter::new(File::create(mask_path)?);
    write!(mask, "subject_id,tick")?;
    for s in specs {
        write!(mask, ",{}", s.name)?;
    }
    writeln!(mask)?;
    for (e, r) in episodes.iter().zip(rollouts) {
        for t in 0..r.actions.n_ticks() {
            write!(mask, "{},{t}", e.subject_id)?;
            for (k, &a) in r.actions.col(t).iter().enumerate() {
                write!(mask, ",{}", u8::from(a))?;
                if a {
                    events.write_record([
                        e.subject_id.clone(),
                        specs[k].name.clone(),
                        (t as f64 * tick_hours).to_string(),
                        r.state.get(k, t + 1).to_string(),
                    ])?;
                }
            }
            writeln!(mask)?;
        }
    }
    events.flush()?;
    mask.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};

    fn episode(rows: &[Vec<f64>]) -> EpisodeData {
        let x = FeatureMatrix::from_rows(rows);
        EpisodeData {
            subject_id: "s".into(),
            y: vec![0.0; x.n_ticks()],
            x,
        }
    }

    fn random_episode(n_f: usize, n_t: usize, rng: &mut ChaCha8Rng) -> EpisodeData {
        let rows: Vec<Vec<f64>> = (0..n_f)
            .map(|_| (0..n_t).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        episode(&rows)
    }

    #[test]
    fn reset_exposes_fill_column() {
        let e = episode(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let a = AcquisitionEnv::reset(&e, false);
        let b = AcquisitionEnv::reset(&e, false);
        assert_eq!(a.observation(), &[FILL_VALUE; 3]);
        assert_eq!(a.observation(), b.observation());
    }

    #[test]
    fn step_follows_transition() {
        let e = episode(&[vec![2.0, 7.0], vec![3.0, 8.0]]);
        let mut env = AcquisitionEnv::reset(&e, false);
        assert_eq!(env.step(&[true, false]).unwrap(), &[2.0, FILL_VALUE]);
        assert_eq!(env.step(&[false, false]).unwrap(), &[2.0, FILL_VALUE]);
        assert!(env.done());
        assert!(env.step(&[true, true]).is_err());

        let mut env = AcquisitionEnv::reset(&e, false);
        assert_eq!(env.step(&[true, true]).unwrap(), &[2.0, 3.0]);
        assert_eq!(env.step(&[true, true]).unwrap(), &[7.0, 8.0]);
    }

    #[test]
    fn reveal_current_tick_removes_latency() {
        let e = episode(&[vec![2.0, 7.0, 9.0]]);
        let mut env = AcquisitionEnv::reset(&e, true);
        assert_eq!(env.step(&[true]).unwrap(), &[7.0]);
        assert_eq!(env.step(&[true]).unwrap(), &[9.0]);
        assert_eq!(env.step(&[true]).unwrap(), &[9.0]);
    }

    #[test]
    fn always_and_never_fetch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let eps: Vec<EpisodeData> = (0..5).map(|_| random_episode(3, 7, &mut rng)).collect();
        let all = synthesize_states(
            &eps,
            &ConstantPolicy {
                n_features: 3,
                prob: 1.0,
            },
            SynthMode::Sample,
            1,
            false,
        )
        .unwrap();
        let none = synthesize_states(
            &eps,
            &ConstantPolicy {
                n_features: 3,
                prob: 0.0,
            },
            SynthMode::Sample,
            1,
            false,
        )
        .unwrap();
        for ((e, a), n) in eps.iter().zip(&all).zip(&none) {
            assert_eq!(a.state.col(0), &[FILL_VALUE; 3]);
            for t in 0..7 {
                assert_eq!(a.state.col(t + 1), e.x.col(t));
            }
            assert!(n.state.as_slice().iter().all(|&v| v == FILL_VALUE));
            assert_eq!(n.actions.count(), 0);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps: Vec<EpisodeData> = (0..6).map(|_| random_episode(4, 9, &mut rng)).collect();
        let p = ConstantPolicy {
            n_features: 4,
            prob: 0.4,
        };
        let a = synthesize_states(&eps, &p, SynthMode::Sample, 11, false).unwrap();
        let b = synthesize_states(&eps, &p, SynthMode::Sample, 11, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let e = episode(&[vec![1.0, 2.0]]);
        assert!(synthesize_states(
            &[e],
            &ConstantPolicy {
                n_features: 2,
                prob: 1.0
            },
            SynthMode::Sample,
            0,
            false
        )
        .is_err());
    }

    #[test]
    fn export_writes_events_and_mask() {
        let e = episode(&[vec![2.0, 7.0], vec![3.0, 8.0]]);
        let r = synthesize_states(
            std::slice::from_ref(&e),
            &SubsetPolicy::from_indices(2, &[1]),
            SynthMode::Deterministic,
            0,
            false,
        )
        .unwrap();
        let specs = vec![
            FeatureSpec::new("a", crate::data::FeatureKind::Dynamic, 1.0).unwrap(),
            FeatureSpec::new("b", crate::data::FeatureKind::Dynamic, 1.0).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let (ev, mk) = (dir.path().join("e.csv"), dir.path().join("m.csv"));
        export_rollouts(&[e], &r, &specs, 0.5, &ev, &mk).unwrap();
        let events = std::fs::read_to_string(ev).unwrap();
        assert_eq!(
            events,
            "subject_id,feature_name,time_hours,value\ns,b,0,3\ns,b,0.5,8\n"
        );
        let mask = std::fs::read_to_string(mk).unwrap();
        assert_eq!(mask, "subject_id,tick,a,b\ns,0,0,1\ns,1,0,1\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn every_entry_is_one_of_two_alternatives(seed in 0u64..10_000, n_f in 1usize..5, n_t in 1usize..12, p in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = random_episode(n_f, n_t, &mut rng);
            let r = roll_episode(&e, &ConstantPolicy { n_features: n_f, prob: p }, SynthMode::Sample, false, &mut rng);
            prop_assert_eq!(r.state.n_ticks(), n_t + 1);
            prop_assert_eq!(r.actions.n_ticks(), n_t);
            for t in 1..=n_t {
                for k in 0..n_f {
                    let s = r.state.get(k, t);
                    let expect = if r.actions.get(k, t - 1) { e.x.get(k, t - 1) } else { r.state.get(k, t - 1) };
                    prop_assert_eq!(s, expect);
                }
            }
        }
    }
}
