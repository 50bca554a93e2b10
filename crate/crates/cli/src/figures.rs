//! Chart builders. Every chart is drawn from a parsed CSV table so that
//! re-rendering from the files on disk gives identical output.

use prefdyn::chart::{
    compose, LineChart, Series, BLUE, GREEN, ORANGE, PALETTE, PURPLE, RED, YELLOW,
};
use prefdyn::table::Table;
use prefdyn::world::{init_targets, Scenario, ToySpace};

fn series(t: &Table, col: &str, name: &str, color: &str) -> Series {
    Series::new(name, color, t.xy("epoch", col).unwrap_or_default())
}

fn likelihood_panel(t: &Table, title: &str, log_y: bool) -> LineChart {
    let chart = LineChart::new(
        title,
        "epoch",
        if log_y {
            "likelihood (log scale)"
        } else {
            "likelihood"
        },
    )
    .plot(series(t, "avg_chosen", "avg chosen", BLUE))
    .plot(series(t, "min_chosen", "min chosen", YELLOW))
    .plot(series(t, "avg_rejected", "avg rejected", GREEN))
    .plot(series(t, "max_rejected", "max rejected", RED))
    .plot(series(t, "avg_unseen", "avg unseen", PURPLE));
    if log_y {
        chart.log_y()
    } else {
        chart
    }
}

pub fn likelihood(t: &Table, log_y: bool) -> String {
    let title = if log_y {
        "Likelihood dynamics (log scale)"
    } else {
        "Likelihood dynamics"
    };
    likelihood_panel(t, title, log_y).to_svg()
}

pub fn gradients(t: &Table) -> String {
    LineChart::new(
        "Mean gradient magnitudes",
        "epoch",
        "mean |dl/dpi| (log scale)",
    )
    .log_y()
    .plot(series(t, "grad_plus_mean", "|dl/dpi+|", BLUE))
    .plot(series(t, "grad_minus_mean", "|dl/dpi-|", RED))
    .to_svg()
}

/// Initial-state panel (targets per scenario, prompt 0) followed by one
/// likelihood panel per scenario.
pub fn suite(tables: &[(Scenario, Table)]) -> String {
    let space = ToySpace::standard();
    let mut initial = LineChart::new(
        "Initial state (prompt 0)",
        "response index",
        "target likelihood",
    );
    for (i, (sc, _)) in tables.iter().enumerate() {
        let row = &init_targets(&space, *sc)[0];
        let pts = row
            .iter()
            .enumerate()
            .map(|(a, &v)| (a as f64, v))
            .collect();
        initial = initial
            .plot(Series::new(sc.to_string(), PALETTE[i % PALETTE.len()], pts).with_markers());
    }
    let mut panels = vec![initial];
    for (sc, t) in tables {
        panels.push(likelihood_panel(
            t,
            &format!("Scenario {}", sc.number()),
            false,
        ));
    }
    compose(&panels, 3)
}

/// Decline epoch and final likelihoods against β−, from per-value CSVs.
pub fn sweep(points: &[(f64, Table)]) -> String {
    let decline: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|(b, t)| {
            let epochs = t.column("epoch")?;
            let rej = t.column("avg_rejected")?;
            epochs
                .iter()
                .zip(&rej)
                .find(|(_, r)| **r < prefdyn::trainer::DECLINE_THRESHOLD)
                .map(|(e, _)| (*b, *e))
        })
        .collect();
    let last = |col: &str| -> Vec<(f64, f64)> {
        points
            .iter()
            .filter_map(|(b, t)| {
                t.column(col)
                    .and_then(|c| c.last().copied())
                    .map(|v| (*b, v))
            })
            .collect()
    };
    let a = LineChart::new("Epoch when avg rejected < 0.01", "beta-", "epoch")
        .plot(Series::new("decline epoch", RED, decline).with_markers());
    let b = LineChart::new("Final likelihoods", "beta-", "likelihood (log scale)")
        .log_y()
        .plot(Series::new("avg chosen", BLUE, last("avg_chosen")).with_markers())
        .plot(Series::new("avg rejected", GREEN, last("avg_rejected")).with_markers())
        .plot(Series::new("avg unseen", PURPLE, last("avg_unseen")).with_markers());
    compose(&[a, b], 2)
}

pub fn accuracy(dpo: &Table, rm: &Table) -> String {
    LineChart::new(
        "Pairwise accuracy on the preference set",
        "epoch",
        "accuracy",
    )
    .plot(Series::new(
        "DPO implicit reward",
        BLUE,
        dpo.xy("epoch", "accuracy").unwrap_or_default(),
    ))
    .plot(Series::new(
        "reward model",
        ORANGE,
        rm.xy("epoch", "accuracy").unwrap_or_default(),
    ))
    .to_svg()
}

pub fn paired_gradients(dpo: &Table, rm: &Table) -> String {
    let a = LineChart::new("DPO gradients", "epoch", "mean |dl/dpi| (log scale)")
        .log_y()
        .plot(series(dpo, "grad_plus_mean", "|dl/dpi+|", BLUE))
        .plot(series(dpo, "grad_minus_mean", "|dl/dpi-|", RED));
    let b = LineChart::new("Reward-model gradients", "epoch", "mean |dl/dr|")
        .plot(series(rm, "grad_plus_mean", "|dl/dr+|", BLUE))
        .plot(series(rm, "grad_minus_mean", "|dl/dr-|", RED));
    compose(&[a, b], 2)
}
