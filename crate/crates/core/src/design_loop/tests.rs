use super::*;
use crate::scenarios::ScenarioConfig;

fn quick_mcmc() -> McmcConfig {
    McmcConfig { burn_in: 300, draws: 40, ..Default::default() }
}

fn quick_cfg(criterion: Criterion, mode: Mode, budget: usize) -> CampaignConfig {
    CampaignConfig {
        mode,
        criterion,
        budget,
        nmc: NmcConfig { outer_s: 400, ..Default::default() },
        compression: Some(CompressionConfig { j0: 20, j_target: 8, ..Default::default() }),
        stage1: quick_mcmc(),
        mcmc: quick_mcmc(),
        fim: FimConfig { max_samples: Some(5), ..Default::default() },
        metric_samples: 200,
        ..Default::default()
    }
}

fn toy(n_candidates: usize) -> (Scenario, CampaignState) {
    let sc = ScenarioConfig { n_candidates: Some(n_candidates), n_pred: Some(40), ..ScenarioConfig::toy() }.build().unwrap();
    let cfg = quick_cfg(Criterion::Mi, Mode::Sde, 0).resolved(&sc);
    let model = sc.fit(&cfg.stage1, &cfg.mcmc).unwrap();
    let st = CampaignState::new(model, sc.candidates.clone(), usize::MAX).unwrap();
    (sc, st)
}

#[test]
fn last_remaining_candidate_wins_for_every_criterion() {
    let (sc, st) = toy(3);
    let st = commit_sde(&commit_sde(&st, 0).unwrap(), 2).unwrap();
    for c in Criterion::ALL {
        let cfg = quick_cfg(c, Mode::Sde, 1).resolved(&sc);
        let s = suggest_next(&st, &cfg).unwrap();
        assert_eq!(s.candidate_index, 1, "{c}");
        assert_eq!(s.scores.len(), 1);
    }
}

#[test]
fn maximin_without_selection_takes_lowest_index() {
    let (sc, st) = toy(7);
    let cfg = quick_cfg(Criterion::Maximin, Mode::Sde, 1).resolved(&sc);
    assert_eq!(suggest_next(&st, &cfg).unwrap().candidate_index, 0);
}

#[test]
fn sde_commit_shrinks_covariance_and_keeps_posterior() {
    let (_, st) = toy(10);
    let next = commit_sde(&st, 4).unwrap();
    assert_eq!(next.selected.len(), 1);
    assert_eq!(next.round, 1);
    assert!(Arc::ptr_eq(&st.model, &next.model));
    for (a, b) in st.caches().iter().zip(next.caches()) {
        assert!(b.ctx.trace() <= a.ctx.trace() + 1e-10);
        assert_eq!(a.mean_pred, b.mean_pred);
    }
    let third = commit_sde(&next, 7).unwrap();
    for (a, b) in next.caches().iter().zip(third.caches()) {
        assert!(b.ctx.trace() <= a.ctx.trace() + 1e-10);
    }
    assert!(matches!(commit_sde(&third, 4), Err(Error::DuplicateSelection { candidate: 4 })));
    assert!(commit_sde(&third, 99).is_err());
}

#[test]
fn ade_commit_grows_field_data() {
    let (_, st) = toy(10);
    let n0 = st.model.data.n_field();
    let next = commit_ade(&st, 3, &[1.5], &quick_mcmc()).unwrap();
    assert_eq!(next.model.data.n_field(), n0 + 1);
    assert_eq!(next.selected[0].observation, Some(vec![1.5]));
    assert!(matches!(commit_ade(&next, 3, &[1.0], &quick_mcmc()), Err(Error::DuplicateSelection { .. })));
    assert!(commit_ade(&next, 4, &[f64::NAN], &quick_mcmc()).is_err());
}

#[test]
fn zero_budget_reports_initial_metrics_only() {
    let (sc, st) = toy(10);
    let cfg = quick_cfg(Criterion::Maximin, Mode::Sde, 0).resolved(&sc);
    let r = run_campaign_from(&st, &cfg, &sc).unwrap();
    assert!(r.selected.is_empty());
    assert_eq!(r.metrics.len(), 1);
    assert!(r.metrics[0].mse.is_finite() && r.metrics[0].crps > 0.0);
}

#[test]
fn budget_beyond_candidates_is_rejected() {
    let (sc, st) = toy(4);
    let cfg = quick_cfg(Criterion::Maximin, Mode::Sde, 5).resolved(&sc);
    assert!(matches!(run_campaign_from(&st, &cfg, &sc), Err(Error::InvalidConfig(_))));
}

#[test]
fn sde_replay_is_deterministic() {
    let (sc, st) = toy(12);
    for c in [Criterion::MiCx, Criterion::Imspe] {
        let cfg = quick_cfg(c, Mode::Sde, 3).resolved(&sc);
        let a = run_campaign_from(&st, &cfg, &sc).unwrap();
        let b = run_campaign_from(&st, &cfg, &sc).unwrap();
        assert_eq!(a.selected_indices(), b.selected_indices());
        assert_eq!(a.mse_series(), b.mse_series());
        let mut uniq = a.selected_indices();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 3);
    }
}

#[test]
fn sde_metrics_keep_mean_and_shrink_spread() {
    let (sc, st) = toy(12);
    let cfg = CampaignConfig { posthoc_metrics: true, ..quick_cfg(Criterion::Imspe, Mode::Sde, 3).resolved(&sc) };
    let r = run_campaign_from(&st, &cfg, &sc).unwrap();
    for m in &r.metrics {
        assert!((m.mse - r.metrics[0].mse).abs() < 1e-9 * (1.0 + r.metrics[0].mse));
    }
    let ph = r.posthoc_metrics.unwrap();
    assert_eq!(ph.len(), 4);
    assert_eq!(ph[0], r.metrics[0]);
}

#[test]
fn maximin_ignores_the_mode() {
    let (sc, st) = toy(9);
    let sde = run_campaign_from(&st, &quick_cfg(Criterion::Maximin, Mode::Sde, 3).resolved(&sc), &sc).unwrap();
    let ade = run_campaign_from(&st, &quick_cfg(Criterion::Maximin, Mode::Ade, 3).resolved(&sc), &sc).unwrap();
    assert_eq!(sde.selected_indices(), ade.selected_indices());
    assert!(ade.selected.iter().all(|s| s.observation.is_some()));
    assert!(sde.selected.iter().all(|s| s.observation.is_none()));
}

#[test]
fn hybrid_columns_follow_alpha() {
    let (sc, st) = toy(9);
    let cfg = quick_cfg(Criterion::ImspeCx, Mode::Sde, 1).resolved(&sc);
    let s = suggest_next(&st, &cfg).unwrap();
    assert!(s.scores.iter().all(|x| x.hybrid.is_some() && x.complexity.is_some()));
    let off = CampaignConfig { alpha: Some(0.0), ..quick_cfg(Criterion::ImspeCx, Mode::Sde, 1) }.resolved(&sc);
    let s0 = suggest_next(&st, &off).unwrap();
    assert!(s0.scores.iter().all(|x| x.hybrid.is_none()));
    let plain = suggest_next(&st, &quick_cfg(Criterion::Imspe, Mode::Sde, 1).resolved(&sc)).unwrap();
    assert_eq!(s0.candidate_index, plain.candidate_index);
}

#[test]
fn dopt_scores_are_finite() {
    let (sc, st) = toy(6);
    let s = suggest_next(&st, &quick_cfg(Criterion::Dopt, Mode::Sde, 1).resolved(&sc)).unwrap();
    assert!(s.scores.iter().all(|x| x.raw.is_finite()));
}

#[test]
fn random_baseline_is_seeded() {
    let (sc, st) = toy(12);
    let cfg = CampaignConfig { policy: Policy::Random, ..quick_cfg(Criterion::Mi, Mode::Sde, 4).resolved(&sc) };
    let a = run_campaign_from(&st, &cfg, &sc).unwrap();
    let b = run_campaign_from(&st, &cfg, &sc).unwrap();
    assert_eq!(a.selected_indices(), b.selected_indices());
    assert!(a.rounds.iter().all(|r| r.scores.is_empty()));
}

#[test]
fn restore_matches_incremental_state() {
    let (sc, st) = toy(10);
    let st2 = commit_sde(&commit_sde(&st, 1).unwrap(), 6).unwrap();
    let back = CampaignState::restore((*st.model).clone(), sc.candidates.clone(), st2.selected.clone(), usize::MAX).unwrap();
    for (a, b) in st2.caches().iter().zip(back.caches()) {
        assert!((a.ctx.trace() - b.ctx.trace()).abs() < 1e-9);
    }
    let cfg = quick_cfg(Criterion::Imspe, Mode::Sde, 1).resolved(&sc);
    assert_eq!(suggest_next(&st2, &cfg).unwrap().candidate_index, suggest_next(&back, &cfg).unwrap().candidate_index);
}

#[test]
fn scores_export_as_csv() {
    let (sc, st) = toy(6);
    let r = run_campaign_from(&st, &quick_cfg(Criterion::MiCx, Mode::Sde, 2).resolved(&sc), &sc).unwrap();
    let mut buf = Vec::new();
    r.write_scores_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "round,candidate_index,raw,complexity,hybrid,selected_flag");
    assert_eq!(lines.len(), 1 + 6 + 5);
    assert_eq!(lines.iter().filter(|l| l.ends_with(",1")).count(), 2);
    let json = serde_json::to_string(&r).unwrap();
    let back: CampaignResult = serde_json::from_str(&json).unwrap();
    assert_eq!(back.selected_indices(), r.selected_indices());
}

#[test]
fn lazy_caches_agree_with_dense() {
    let (sc, st) = toy(6);
    let lazy = CampaignState::new((*st.model).clone(), sc.candidates.clone(), 0).unwrap();
    assert!(!lazy.caches()[0].pre.is_dense() && st.caches()[0].pre.is_dense());
    let cfg = quick_cfg(Criterion::Imspe, Mode::Sde, 1).resolved(&sc);
    let a = suggest_next(&st, &cfg).unwrap();
    let b = suggest_next(&lazy, &cfg).unwrap();
    for (x, y) in a.scores.iter().zip(&b.scores) {
        assert!((x.raw - y.raw).abs() < 1e-9 * x.raw.abs().max(1.0));
    }
}

#[test]
fn predictive_band_brackets_the_mean_and_narrows_after_selection() {
    let (_, st) = toy(10);
    let grid: Vec<Vec<f64>> = vec![vec![-1.0], vec![0.5], vec![4.0]];
    let band = st.predictive_band(Some(grid.clone())).unwrap();
    assert_eq!(band.mean.len(), 1);
    assert_eq!(band.mean[0].len(), 3);
    for i in 0..3 {
        assert!(band.lower95[0][i] < band.mean[0][i] && band.mean[0][i] < band.upper95[0][i]);
    }
    let near = st.candidates.iter().enumerate().min_by(|a, b| (a.1[0] - 0.5).abs().total_cmp(&(b.1[0] - 0.5).abs())).unwrap().0;
    let next = commit_sde(&st, near).unwrap();
    let after = next.predictive_band(Some(grid)).unwrap();
    assert!(after.upper95[0][1] - after.lower95[0][1] < band.upper95[0][1] - band.lower95[0][1]);
    assert!(st.predictive_band(Some(vec![vec![0.0, 1.0]])).is_err());
    assert_eq!(st.predictive_band(None).unwrap().grid.len(), st.model.prediction_grid.len());
}
