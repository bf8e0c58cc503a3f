use lpcmci::bench::{fixture, run_replicate, BenchConfig, EXAMPLE_SEED};
use lpcmci::ci::OracleCi;
use lpcmci::discovery::{lpcmci_discover, prune_weak_links, DiscoveryConfig, DiscoveryState};
use lpcmci::graph::{GraphKind, TsEdge, TsGraph, TsNode};
use lpcmci::oracle::{oracle_pag, DEFAULT_PADDING};
use lpcmci::scm::{sample_scm, true_window_dag, GenConfig};

fn n(var: usize, lag: usize) -> TsNode {
    TsNode::new(var, lag)
}

#[test]
fn oracle_discovery_with_two_hidden_causes() {
    let e = |a, b| TsEdge::directed(n(a, 0), n(b, 0));
    let dag = TsGraph::build(5, 0, GraphKind::DAG, [e(0, 1), e(3, 1), e(4, 1), e(3, 2), e(4, 2)]).unwrap();
    let backend = OracleCi::new(&dag, &[0, 1, 2], DEFAULT_PADDING).unwrap();
    let cfg = DiscoveryConfig {
        tau_max: 0,
        ..Default::default()
    };
    let out = lpcmci_discover(&backend, &cfg, None).unwrap();
    assert_eq!(out.pag, oracle_pag(&dag, &[0, 1, 2], 0).unwrap());
}

/// Without latent variables the confounder phase can still remove edges:
/// time steps before the window act as hidden common causes. It only ever
/// removes edges that are absent from the oracle PAG.
#[test]
fn confounder_phase_only_removes_spurious_edges_without_latents() {
    let gen = GenConfig {
        latent_count: 0,
        n_vars_total: 6,
        cross_links: 6,
        ..Default::default()
    };
    let cfg = DiscoveryConfig::default();
    let mut removed_total = 0;
    for seed in 0..40u64 {
        let spec = sample_scm(&gen, seed).unwrap();
        let dag = true_window_dag(&spec, 1).unwrap();
        let observed = spec.observed_vars();
        let truth = oracle_pag(&dag, &observed, 1).unwrap();
        let backend = OracleCi::new(&dag, &observed, DEFAULT_PADDING).unwrap();
        let mut st = DiscoveryState::new(observed.len(), 1, None).unwrap();
        st.ancestral_phase(&backend, &cfg).unwrap();
        st.reinitialize_keep_parents();
        st.ancestral_phase(&backend, &cfg).unwrap();
        let before: Vec<_> = st.marks.keys().copied().collect();
        st.confounder_phase(&backend, &cfg).unwrap();
        for key in &before {
            if !st.marks.contains_key(key) {
                removed_total += 1;
                assert!(!truth.adjacent(key.0, key.1), "seed {seed}: removed {key:?}");
            }
        }
        assert!(st.marks.keys().all(|k| before.contains(k)));
        assert!(truth.edges().all(|e| st.marks.contains_key(&(e.a, e.b))), "seed {seed}");
    }
    eprintln!("confounder phase removed {removed_total} edges over 40 latent-free specs");
}

#[test]
fn shipped_example_matches_its_description() {
    let cfg = BenchConfig::default();
    assert_eq!(fixture("fig2").unwrap().seed, EXAMPLE_SEED);
    let fx = fixture("fig3-pruned").unwrap();
    assert_eq!(fx.prune_below, Some(0.10));
    let spec = sample_scm(&cfg.gen_config(), fx.seed).unwrap();
    let mut latent = spec.latent_set.clone();
    latent.sort_unstable();
    assert_eq!(latent, [0, 3, 5]);

    let art = run_replicate(&cfg, fx.seed).unwrap();
    let pruned = prune_weak_links(&art.predicted, &art.strengths, 0.10);
    let removed: Vec<TsEdge> = art.predicted.edges().filter(|e| !pruned.adjacent(e.a, e.b)).collect();
    assert!(!removed.is_empty());
    let orig = |v: TsNode| n(art.observed[v.var], v.lag);
    for e in &removed {
        assert!(!art.oracle.adjacent(e.a, e.b), "{e} is in the oracle PAG");
        assert!(!art.true_dag.adjacent(orig(e.a), orig(e.b)), "{e} is in the true DAG");
    }
}
