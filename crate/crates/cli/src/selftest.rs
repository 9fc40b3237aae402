//! In-process oracle suites behind the `selftest` subcommand: worked
//! loss values, spot gradient checks against finite differences, and the
//! brute-force correlation oracle. Fast by construction (a few seconds).

use dcmetric_core::baselines::{bce_loss, supcon_loss, FeatureGrid, TwoLevelView};
use dcmetric_core::corpus::{encode_pair, SimpleTokenizer, Utterance, Vocabulary};
use dcmetric_core::distill::{kd_mse_loss, KdHyper, KdNorm, TracePair};
use dcmetric_core::math;
use dcmetric_core::mlr::{
    mlr_loss, mlr_loss_with_grad, ordering_loss, separation_loss,
    Centroids, MlrFlags, MlrHyper, ScoreGrid,
};
use dcmetric_core::model::{init_model, MetricModel, Mode, ModelConfig, OutputGrads, Params};
use dcmetric_core::rng::Rng;
use dcmetric_core::stats::{correlate, CorrelationMethod};

use crate::error::{Result, ToolError};
use crate::synth;

fn check(name: &str, passed: bool, detail: String) -> Result<()> {
    if passed {
        println!("[PASS] {name}");
        Ok(())
    } else {
        println!("[FAIL] {name}: {detail}");
        Err(ToolError::Other(format!("selftest failed: {name}: {detail}")))
    }
}

fn approx(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn loss_hand_values() -> Result<()> {
    let hyper = MlrHyper::new(0.3, 0.1)?;
    let sep = separation_loss(
        &Centroids {
            values: vec![0.5, 0.5, 0.5],
        },
        &hyper,
    );
    check("separation 1.2 for coincident centroids", approx(sep, 1.2, 1e-6), format!("{sep}"))?;

    let ord = ordering_loss(&Centroids {
        values: vec![0.9, 0.5, 0.2],
    });
    check("ordering 1.4 for descending centroids", approx(ord, 1.4, 1e-6), format!("{ord}"))?;

    let grid = ScoreGrid::new(vec![vec![0.0, 0.4], vec![0.2, 0.2], vec![0.2, 0.2]]);
    let report = mlr_loss(&[grid], &hyper)?;
    check("mlr total 1.4 for the worked grid", approx(report.total, 1.4, 1e-6), format!("{}", report.total))?;

    // KD-MSE 0.61 for mse 0.16, kd 0.09, weights (1, 5).
    let teacher = hand_trace(0.5, 0.2, 0.9);
    let student = hand_trace(0.5, 0.5, 0.6);
    let pair = TracePair {
        teacher: &teacher,
        student: &student,
    };
    let report = kd_mse_loss(&[(pair, 1.0)], &KdHyper::new(1.0, 5.0)?, KdNorm::PerElement)?;
    check("kd-mse total 0.61 for (0.16, 0.09)", approx(report.total, 0.61, 1e-6), format!("{}", report.total))?;

    let view = TwoLevelView {
        positives: vec![0.5, 0.5],
        negatives: vec![0.5],
    };
    let bce = bce_loss(&view);
    check("bce ln 2 for uninformative scores", approx(bce, math::ln(2.0), 1e-6), format!("{bce}"))?;

    let features = FeatureGrid::new(vec![
        vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        vec![vec![0.0, 1.0], vec![0.0, 1.0]],
    ]);
    let sc = supcon_loss(&features, 1.0)?;
    let expected = -math::ln(math::exp(1.0) / (math::exp(1.0) + 2.0));
    check("supcon worked example", approx(sc, expected, 1e-6), format!("{sc}"))
}

fn hand_trace(fill: f64, pred: f64, score: f64) -> dcmetric_core::model::ForwardTrace {
    dcmetric_core::model::ForwardTrace {
        seq_len: 2,
        hidden_dim: 2,
        num_heads: 1,
        mask: vec![1, 1],
        layer_outputs: vec![vec![fill; 4], vec![fill; 4], vec![pred]],
        attention_scores: vec![vec![fill; 4]],
        score,
    }
}

fn gradient_spot_checks() -> Result<()> {
    // Ranking-loss gradient against central differences.
    let grids = vec![ScoreGrid::new(vec![
        vec![0.11, 0.42],
        vec![0.35, 0.27],
        vec![0.72, 0.58],
    ])];
    let hyper = MlrHyper::new(0.3, 0.1)?;
    let (_, grads) = mlr_loss_with_grad(&grids, &hyper, &MlrFlags::default())?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for j in 0..3 {
        for k in 0..2 {
            let mut plus = grids.clone();
            plus[0].levels[j][k] += h;
            let mut minus = grids.clone();
            minus[0].levels[j][k] -= h;
            let fd =
                (mlr_loss(&plus, &hyper)?.total - mlr_loss(&minus, &hyper)?.total) / (2.0 * h);
            worst = worst.max((grads[0][j][k] - fd).abs());
        }
    }
    check("mlr gradient vs finite differences", worst < 1e-6, format!("worst {worst:.2e}"))?;

    // Model score gradient on a tiny model, a sample of parameters.
    let corpus = synth::gen_pretrain_corpus(3, 3, 2, 11)?;
    let vocab = Vocabulary::build(&corpus, &SimpleTokenizer, 1)?;
    let model = init_model(ModelConfig::tiny(vocab.len(), 5))?;
    let pair = encode_pair(
        &[Utterance::new("where is lunch today")?],
        &Utterance::new("tone3a just tone3b")?,
        &vocab,
        &SimpleTokenizer,
        16,
    )?;
    let cache = model.forward(&pair, Mode::Inference)?;
    let mut grads = Params::zeros(&model.config);
    model.backward(
        &cache,
        &OutputGrads {
            score: 1.0,
            ..Default::default()
        },
        &mut grads,
    )?;
    let analytic = grads.flatten(&model.config);
    let flat = model.params.flatten(&model.config);
    let mut probe: MetricModel = model.clone();
    let mut rng = Rng::new(17);
    let mut worst = 0.0f64;
    for _ in 0..60 {
        let i = rng.below(flat.len());
        let h = 1e-5;
        let mut plus = flat.clone();
        plus[i] += h;
        probe.params.assign_flat(&plus);
        let fp = probe.forward_score(&pair)?;
        let mut minus = flat.clone();
        minus[i] -= h;
        probe.params.assign_flat(&minus);
        let fm = probe.forward_score(&pair)?;
        let fd = (fp - fm) / (2.0 * h);
        let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((analytic[i] - fd).abs() / denom);
    }
    check("score gradient vs finite differences", worst < 1e-3, format!("worst {worst:.2e}"))
}

fn correlation_brute_force() -> Result<()> {
    let mut rng = Rng::new(23);
    let mut worst = 0.0f64;
    for round in 0..20 {
        let n = 5 + rng.below(40);
        let tie_heavy = round % 2 == 0;
        let gen = |rng: &mut Rng| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v = rng.normal();
                    if tie_heavy {
                        (v * 2.0).round() / 2.0
                    } else {
                        v
                    }
                })
                .collect()
        };
        let x = gen(&mut rng);
        let y = gen(&mut rng);
        let Ok((tau, _)) = correlate(&x, &y, CorrelationMethod::KendallTauB) else {
            continue;
        };
        // Explicit O(n^2) pair counting.
        let (mut c, mut d, mut tx, mut ty) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..n {
            for j in i + 1..n {
                let dx = x[j] - x[i];
                let dy = y[j] - y[i];
                if dx == 0.0 && dy == 0.0 {
                } else if dx == 0.0 {
                    tx += 1.0;
                } else if dy == 0.0 {
                    ty += 1.0;
                } else if dx * dy > 0.0 {
                    c += 1.0;
                } else {
                    d += 1.0;
                }
            }
        }
        let brute = (c - d) / math::sqrt((c + d + tx) * (c + d + ty));
        worst = worst.max((tau - brute).abs());
    }
    check("kendall vs pair-counting oracle", worst < 1e-10, format!("worst {worst:.2e}"))?;

    let x = [1.0, 2.0, 3.0, 4.0];
    let y = [1.0, 3.0, 2.0, 4.0];
    let (tau, _) = correlate(&x, &y, CorrelationMethod::KendallTauB)?;
    check("kendall worked example 2/3", tau == 2.0 / 3.0, format!("{tau}"))
}

/// Runs all oracle suites, printing one line per check.
pub fn run_selftest() -> Result<()> {
    loss_hand_values()?;
    gradient_spot_checks()?;
    correlation_brute_force()?;
    println!("selftest: all suites passed");
    Ok(())
}
