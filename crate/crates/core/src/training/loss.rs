//! Hungarian-matched reconstruction and the two-branch SFTD objective.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::hungarian::hungarian_assignment;
use crate::error::{Error, Result};
use crate::neuralcore::{BoundModel, ModelParams, SetBatch, Tape, Tensor, Var};
use crate::quantizer::{quantize_batch, BatchQuantization, CodebookLevel};

/// Optimal injective matching of the target rows into predicted slots.
/// Returns the slot of each target row and the summed squared distance.
pub fn match_slots(predicted: &Tensor, target: &Tensor) -> Result<(Vec<usize>, f64)> {
    let (m, d) = predicted.shape();
    let n = target.rows();
    if target.cols() != d {
        return Err(Error::invalid(format!(
            "target width {} differs from prediction width {d}",
            target.cols()
        )));
    }
    if n == 0 || n > m {
        return Err(Error::invalid(format!(
            "cannot match {n} targets into {m} slots"
        )));
    }
    let mut cost = vec![0.0; n * m];
    for i in 0..n {
        let t = target.row(i);
        for j in 0..m {
            cost[i * m + j] = predicted
                .row(j)
                .iter()
                .zip(t)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
        }
    }
    hungarian_assignment(&cost, n, m)
}

/// Squared error between the target rows and their optimally matched
/// predicted slots, averaged over the targets.
pub fn reconstruction_loss(predicted: &Tensor, target: &Tensor) -> Result<f64> {
    let (_, cost) = match_slots(predicted, target)?;
    Ok(cost / target.rows() as f64)
}

/// Objective weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Commitment weight β.
    pub beta: f64,
    /// Distillation weight λ.
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta: 0.5,
            lambda: 0.1,
        }
    }
}

/// Every discrete or stop-gradient quantity of one evaluation. Replaying them
/// turns the objective into a smooth function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenChoices {
    /// Per branch, the frame indices fed for each item.
    pub subsets: [Vec<Vec<usize>>; 2],
    /// Per branch, `q − z` (`B × d_z`).
    pub offsets: [Tensor; 2],
    /// Per branch and level, the partial codeword sums.
    pub partial_sums: [Vec<Tensor>; 2],
    /// Per branch and item, the slot of each target frame.
    pub slots: [Vec<Vec<usize>>; 2],
    /// The branch-1 latents used as the distillation target.
    pub anchor: Tensor,
}

/// How branch inputs and discrete choices are obtained.
pub enum Choices<'a> {
    /// Branch 2 samples `P' ~ U{1..P}` frames without replacement; with
    /// `sample_branch1`, branch 1 does too.
    Sample {
        rng: &'a mut ChaCha8Rng,
        sample_branch1: bool,
    },
    /// Given frame subsets per branch; everything else computed fresh.
    Subsets([Vec<Vec<usize>>; 2]),
    /// Replay a previous evaluation exactly.
    Frozen(&'a FrozenChoices),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub recon: [f64; 2],
    pub commit: [f64; 2],
    pub distill: f64,
    pub total: f64,
}

/// One recorded evaluation of the objective.
pub struct SftdForward {
    pub tape: Tape,
    pub model: BoundModel,
    pub loss: Var,
    pub latents: [Var; 2],
    pub terms: LossTerms,
    /// Per branch; `None` when the choices were replayed.
    pub quantization: [Option<BatchQuantization>; 2],
    pub choices: FrozenChoices,
}

fn gather(items: &[&[f64]], subsets: &[Vec<usize>], dim: usize) -> Result<(SetBatch, Tensor)> {
    let mut data = Vec::new();
    let mut sizes = Vec::with_capacity(items.len());
    for (item, subset) in items.iter().zip(subsets) {
        let frames = item.len() / dim;
        for &p in subset {
            if p >= frames {
                return Err(Error::invalid(format!(
                    "frame {p} out of range for a {frames}-frame set"
                )));
            }
            data.extend_from_slice(&item[p * dim..(p + 1) * dim]);
        }
        sizes.push(subset.len());
    }
    let rows = Tensor::new(data.len() / dim, dim, data)?;
    Ok((SetBatch::new(rows.clone(), sizes)?, rows))
}

fn all_frames(items: &[&[f64]], dim: usize) -> Vec<Vec<usize>> {
    items
        .iter()
        .map(|it| (0..it.len() / dim).collect())
        .collect()
}

fn random_subsets(items: &[&[f64]], dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    items
        .iter()
        .map(|it| {
            let p = it.len() / dim;
            let k = rng.random_range(1..=p);
            let mut s = sample(rng, p, k).into_vec();
            s.sort_unstable();
            s
        })
        .collect()
}

struct Branch {
    z: Var,
    recon: Var,
    commit: Var,
    offset: Tensor,
    partial_sums: Vec<Tensor>,
    slots: Vec<Vec<usize>>,
    quant: Option<BatchQuantization>,
}

fn run_branch(
    tape: &mut Tape,
    model: &BoundModel,
    params: &ModelParams,
    levels: &[CodebookLevel],
    items: &[&[f64]],
    subsets: &[Vec<usize>],
    frozen: Option<(&Tensor, &[Tensor], &[Vec<usize>])>,
) -> Result<Branch> {
    let cfg = params.config();
    let (batch, targets) = gather(items, subsets, cfg.input_dim)?;
    let b = batch.len();
    let z = model.encode(tape, &batch)?;
    let zv = tape.value(z).clone();
    if !zv.is_finite() {
        return Err(Error::NonFinite("encoder output".into()));
    }
    let (offset, partial_sums, quant) = match frozen {
        Some((off, ps, _)) => (off.clone(), ps.to_vec(), None),
        None => {
            let q = quantize_batch(&zv, levels)?;
            let mut off = q.quantized.clone();
            for (o, zz) in off.data_mut().iter_mut().zip(zv.data()) {
                *o -= zz;
            }
            (off, q.partial_sums.clone(), Some(q))
        }
    };
    let mut st_value = zv.clone();
    st_value.add_assign(&offset);
    let q_st = tape.straight_through(z, st_value);
    let out = model.decode(tape, q_st);
    let flat = tape.reshape(out, b * cfg.p_max, cfg.input_dim);

    let slots: Vec<Vec<usize>> = match frozen {
        Some((_, _, s)) => s.to_vec(),
        None => {
            let pred = tape.value(flat);
            let mut all = Vec::with_capacity(b);
            let mut off = 0;
            for (bi, &n) in batch.sizes().iter().enumerate() {
                let p = Tensor::new(
                    cfg.p_max,
                    cfg.input_dim,
                    pred.data()
                        [bi * cfg.p_max * cfg.input_dim..(bi + 1) * cfg.p_max * cfg.input_dim]
                        .to_vec(),
                )?;
                let t = Tensor::new(
                    n,
                    cfg.input_dim,
                    targets.data()[off * cfg.input_dim..(off + n) * cfg.input_dim].to_vec(),
                )?;
                all.push(match_slots(&p, &t)?.0);
                off += n;
            }
            all
        }
    };
    let mut pairs = Vec::with_capacity(targets.rows());
    let mut off = 0;
    for (bi, s) in slots.iter().enumerate() {
        let w = 1.0 / (b as f64 * s.len() as f64);
        for (t, &slot) in s.iter().enumerate() {
            pairs.push((bi * cfg.p_max + slot, off + t, w));
        }
        off += s.len();
    }
    let recon = tape.matched_sq_err(flat, targets, pairs);

    let k = partial_sums.len() as f64;
    let commits: Vec<(Var, f64)> = partial_sums
        .iter()
        .map(|ps| (tape.sq_dist_const(z, ps.clone(), 1.0 / (k * b as f64)), 1.0))
        .collect();
    let commit = tape.combine(commits);
    Ok(Branch {
        z,
        recon,
        commit,
        offset,
        partial_sums,
        slots,
        quant,
    })
}

/// `½(R₁ + R₂) + β·½(C₁ + C₂) + λ·mean_b‖z₂ − sg z₁‖²` over a batch of
/// residues, each given as its `P × D_f` standardized descriptor rows.
pub fn sftd_total_loss(
    params: &ModelParams,
    levels: &[CodebookLevel],
    items: &[&[f64]],
    weights: LossWeights,
    choices: Choices<'_>,
) -> Result<SftdForward> {
    let cfg = *params.config();
    if items.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    for it in items {
        let p = it.len() / cfg.input_dim;
        if it.len() % cfg.input_dim != 0 || p == 0 || p > cfg.p_max {
            return Err(Error::invalid(format!(
                "a descriptor set of {} values is not 1..={} rows of width {}",
                it.len(),
                cfg.p_max,
                cfg.input_dim
            )));
        }
    }
    let (subsets, frozen) = match choices {
        Choices::Sample {
            rng,
            sample_branch1,
        } => {
            let s1 = if sample_branch1 {
                random_subsets(items, cfg.input_dim, rng)
            } else {
                all_frames(items, cfg.input_dim)
            };
            let s2 = random_subsets(items, cfg.input_dim, rng);
            ([s1, s2], None)
        }
        Choices::Subsets(s) => (s, None),
        Choices::Frozen(f) => (f.subsets.clone(), Some(f)),
    };
    if subsets.iter().any(|s| s.len() != items.len()) {
        return Err(Error::invalid("one frame subset per item is required"));
    }

    let mut tape = Tape::new();
    let model = params.bind(&mut tape);
    let b1 = run_branch(
        &mut tape,
        &model,
        params,
        levels,
        items,
        &subsets[0],
        frozen.map(|f| {
            (
                &f.offsets[0],
                f.partial_sums[0].as_slice(),
                f.slots[0].as_slice(),
            )
        }),
    )?;
    let b2 = run_branch(
        &mut tape,
        &model,
        params,
        levels,
        items,
        &subsets[1],
        frozen.map(|f| {
            (
                &f.offsets[1],
                f.partial_sums[1].as_slice(),
                f.slots[1].as_slice(),
            )
        }),
    )?;
    let anchor = match frozen {
        Some(f) => f.anchor.clone(),
        None => tape.value(b1.z).clone(),
    };
    let distill = tape.sq_dist_const(b2.z, anchor.clone(), 1.0 / items.len() as f64);
    let loss = tape.combine(vec![
        (b1.recon, 0.5),
        (b2.recon, 0.5),
        (b1.commit, 0.5 * weights.beta),
        (b2.commit, 0.5 * weights.beta),
        (distill, weights.lambda),
    ]);
    let scalar = |v: Var| tape.value(v).data()[0];
    let terms = LossTerms {
        recon: [scalar(b1.recon), scalar(b2.recon)],
        commit: [scalar(b1.commit), scalar(b2.commit)],
        distill: scalar(distill),
        total: scalar(loss),
    };
    if !terms.total.is_finite() {
        return Err(Error::NonFinite(format!("training loss ({terms:?})")));
    }
    Ok(SftdForward {
        latents: [b1.z, b2.z],
        terms,
        quantization: [b1.quant, b2.quant],
        choices: FrozenChoices {
            subsets,
            offsets: [b1.offset, b2.offset],
            partial_sums: [b1.partial_sums, b2.partial_sums],
            slots: [b1.slots, b2.slots],
            anchor,
        },
        tape,
        model,
        loss,
    })
}

/// Mean branch-1 reconstruction loss of `items` through the quantizer, in
/// batches of `batch_size`.
pub fn evaluate_reconstruction(
    params: &ModelParams,
    levels: &[CodebookLevel],
    items: &[&[f64]],
    batch_size: usize,
) -> Result<f64> {
    let cfg = params.config();
    if items.is_empty() {
        return Err(Error::invalid("no items to evaluate"));
    }
    let mut total = 0.0;
    for chunk in items.chunks(batch_size.max(1)) {
        let subsets = all_frames(chunk, cfg.input_dim);
        let (batch, targets) = gather(chunk, &subsets, cfg.input_dim)?;
        let z = params.encode_batch(&batch)?;
        let q = quantize_batch(&z, levels)?;
        let decoded = params.decode_batch(&q.quantized)?;
        let mut off = 0;
        for (bi, &n) in batch.sizes().iter().enumerate() {
            let pred = Tensor::new(cfg.p_max, cfg.input_dim, decoded.row(bi).to_vec())?;
            let t = Tensor::new(
                n,
                cfg.input_dim,
                targets.data()[off * cfg.input_dim..(off + n) * cfg.input_dim].to_vec(),
            )?;
            total += reconstruction_loss(&pred, &t)?;
            off += n;
        }
    }
    let mean = total / items.len() as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite("validation reconstruction loss".into()));
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::{finite_difference_check, ModelConfig};
    use crate::quantizer::kmeans_init;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn small() -> ModelConfig {
        ModelConfig {
            input_dim: 5,
            width: 8,
            n_queries: 2,
            heads: 2,
            n_blocks: 1,
            ff_width: 8,
            latent_dim: 4,
            decoder_hidden: 8,
            p_max: 4,
        }
    }

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn setup(seed: u64) -> (ModelParams, Vec<CodebookLevel>, Vec<Vec<f64>>) {
        let cfg = small();
        let params = ModelParams::init(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let items: Vec<Vec<f64>> = (0..6)
            .map(|i| randn(&mut rng, (1 + i % cfg.p_max) * cfg.input_dim))
            .collect();
        let latents =
            Tensor::new(20, cfg.latent_dim, randn(&mut rng, 20 * cfg.latent_dim)).unwrap();
        let levels = vec![
            kmeans_init(6, &latents, 5, 1).unwrap(),
            kmeans_init(3, &latents, 5, 2).unwrap(),
        ];
        (params, levels, items)
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn matched_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pred = Tensor::new(4, 3, randn(&mut rng, 12)).unwrap();
        let rows: Vec<Vec<f64>> = [2, 0, 3, 1].iter().map(|&i| pred.row(i).to_vec()).collect();
        assert_eq!(
            reconstruction_loss(&pred, &Tensor::from_rows(&rows).unwrap()).unwrap(),
            0.0
        );
        let one = Tensor::new(1, 3, pred.row(3).to_vec()).unwrap();
        assert_eq!(match_slots(&pred, &one).unwrap(), (vec![3], 0.0));
        assert!(reconstruction_loss(&pred, &Tensor::zeros(5, 3)).is_err());
    }

    #[test]
    fn matched_loss_equals_permutation_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in 1..=6 {
            for _ in 0..5 {
                let pred = Tensor::new(p, 3, randn(&mut rng, p * 3)).unwrap();
                let target = Tensor::new(p, 3, randn(&mut rng, p * 3)).unwrap();
                let brute = permutations(p)
                    .iter()
                    .map(|perm| {
                        (0..p)
                            .map(|i| {
                                pred.row(perm[i])
                                    .iter()
                                    .zip(target.row(i))
                                    .map(|(a, b)| (a - b) * (a - b))
                                    .sum::<f64>()
                            })
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
                    / p as f64;
                let got = reconstruction_loss(&pred, &target).unwrap();
                assert!(
                    (got - brute).abs() <= 1e-12 * brute.abs(),
                    "{got} vs {brute}"
                );
            }
        }
    }

    #[test]
    fn lambda_zero_is_mean_of_branches() {
        let (params, levels, items) = setup(1);
        let refs: Vec<&[f64]> = items.iter().map(Vec::as_slice).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = LossWeights {
            beta: 0.5,
            lambda: 0.0,
        };
        let f = sftd_total_loss(
            &params,
            &levels,
            &refs,
            w,
            Choices::Sample {
                rng: &mut rng,
                sample_branch1: false,
            },
        )
        .unwrap();
        let t = f.terms;
        let expect = 0.5 * (t.recon[0] + t.recon[1]) + 0.25 * (t.commit[0] + t.commit[1]);
        assert!((t.total - expect).abs() <= 1e-12 * expect);
        assert!(t.distill >= 0.0);
        assert_eq!(f.choices.subsets[0][3], vec![0, 1, 2, 3]);
        assert!(f.choices.subsets[1]
            .iter()
            .zip(&items)
            .all(|(s, it)| !s.is_empty() && s.len() <= it.len() / 5));
    }

    #[test]
    fn identical_branches_do_not_distill() {
        let (params, levels, items) = setup(2);
        let refs: Vec<&[f64]> = items.iter().map(Vec::as_slice).collect();
        let all = all_frames(&refs, 5);
        let f = sftd_total_loss(
            &params,
            &levels,
            &refs,
            LossWeights::default(),
            Choices::Subsets([all.clone(), all]),
        )
        .unwrap();
        assert_eq!(f.terms.distill, 0.0);
        assert_eq!(f.terms.recon[0], f.terms.recon[1]);
    }

    #[test]
    fn frozen_replay_reproduces_the_loss() {
        let (params, levels, items) = setup(3);
        let refs: Vec<&[f64]> = items.iter().map(Vec::as_slice).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = sftd_total_loss(
            &params,
            &levels,
            &refs,
            LossWeights::default(),
            Choices::Sample {
                rng: &mut rng,
                sample_branch1: true,
            },
        )
        .unwrap();
        let g = sftd_total_loss(
            &params,
            &levels,
            &refs,
            LossWeights::default(),
            Choices::Frozen(&f.choices),
        )
        .unwrap();
        assert_eq!(f.terms, g.terms);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let (params, levels, items) = setup(4);
        let refs: Vec<&[f64]> = items.iter().map(Vec::as_slice).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = LossWeights::default();
        let f = sftd_total_loss(
            &params,
            &levels,
            &refs,
            w,
            Choices::Sample {
                rng: &mut rng,
                sample_branch1: false,
            },
        )
        .unwrap();
        let grads = f.tape.backward(f.loss).unwrap();
        let analytic: Vec<Tensor> = f
            .model
            .vars()
            .iter()
            .map(|&v| grads.wrt(&f.tape, v))
            .collect();
        let names = params.names().to_vec();
        let err = finite_difference_check(
            |ts| {
                let p = ModelParams::from_named(
                    *params.config(),
                    names.iter().cloned().zip(ts.iter().cloned()).collect(),
                )?;
                Ok(
                    sftd_total_loss(&p, &levels, &refs, w, Choices::Frozen(&f.choices))?
                        .terms
                        .total,
                )
            },
            params.tensors(),
            &analytic,
            60,
            1e-4,
            11,
        )
        .unwrap();
        assert!(err < 1e-3, "max relative error {err}");
    }

    #[test]
    fn distillation_sends_no_gradient_to_the_anchor() {
        let (params, levels, items) = setup(5);
        let refs: Vec<&[f64]> = items.iter().map(Vec::as_slice).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let base = sftd_total_loss(
            &params,
            &levels,
            &refs,
            LossWeights::default(),
            Choices::Sample {
                rng: &mut rng,
                sample_branch1: false,
            },
        )
        .unwrap();
        let grad_of = |lambda: f64| {
            let f = sftd_total_loss(
                &params,
                &levels,
                &refs,
                LossWeights { beta: 0.5, lambda },
                Choices::Frozen(&base.choices),
            )
            .unwrap();
            let g = f.tape.backward(f.loss).unwrap();
            (g.wrt(&f.tape, f.latents[0]), g.wrt(&f.tape, f.latents[1]))
        };
        let (z1_a, z2_a) = grad_of(0.0);
        let (z1_b, z2_b) = grad_of(1.0);
        assert_eq!(z1_a, z1_b);
        assert_ne!(z2_a, z2_b);
    }
}
