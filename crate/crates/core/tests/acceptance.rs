//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and fails if any criterion fails.


use std::collections::HashMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use graphmimic::demos::{blockworld_corpus, dishwasher_corpus, DemoDataset};
use graphmimic::explain::{explain_decision, feature_profile, ExplainConfig, ExplainTarget, FeatureProfile};
use graphmimic::learn::{episode_seed, evaluate, train_il_logged, train_ppo, IlConfig, MetricsLog, RlConfig, RlRun, RlVariant};
use graphmimic::policy::{policy_forward, select_action, Architecture, PolicyParams, SelectMode};
use graphmimic::scenegraph::encode_scene;
use graphmimic::worlds::{reset, step, Preference, WorldSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPISODES: usize = 50;
const SEEDS: [u64; 3] = [0, 1, 2];
const BUDGET_SECONDS: f64 = 20.0 * 60.0;
const DECISIONS: usize = 100;

struct Trained {
    params: PolicyParams,
    seconds: f64,
    samples: usize,
}

fn train(data: &DemoDataset, arch: Architecture) -> Trained {
    let start = Instant::now();
    let (params, report) = train_il_logged(data, &IlConfig::new(arch), &mut MetricsLog::disabled()).unwrap();
    Trained { params, seconds: start.elapsed().as_secs_f64(), samples: report.samples }
}

fn blockworld(arch: Architecture) -> &'static Trained {
    static SAGE: OnceLock<Trained> = OnceLock::new();
    static ATTENTION: OnceLock<Trained> = OnceLock::new();
    static GATED: OnceLock<Trained> = OnceLock::new();
    let cell = match arch {
        Architecture::Sage => &SAGE,
        Architecture::Attention => &ATTENTION,
        Architecture::Gated => &GATED,
        other => panic!("no blockworld model for {other}"),
    };
    cell.get_or_init(|| train(&blockworld_corpus(0).unwrap(), arch))
}

fn dishwasher(pref: Preference) -> &'static Trained {
    static TOP_BOTTOM: OnceLock<Trained> = OnceLock::new();
    static LEFT_RIGHT: OnceLock<Trained> = OnceLock::new();
    let cell = match pref {
        Preference::TopBottom => &TOP_BOTTOM,
        Preference::LeftRight => &LEFT_RIGHT,
    };
    cell.get_or_init(|| train(&dishwasher_corpus(pref, 5, 0).unwrap(), Architecture::Sage))
}

fn rl(variant: RlVariant) -> &'static RlRun {
    static MLP: OnceLock<RlRun> = OnceLock::new();
    static GNN: OnceLock<RlRun> = OnceLock::new();
    static GNN_SEQ: OnceLock<RlRun> = OnceLock::new();
    let cell = match variant {
        RlVariant::Mlp => &MLP,
        RlVariant::Gnn => &GNN,
        RlVariant::GnnSeq => &GNN_SEQ,
        other => panic!("no run for {other}"),
    };
    cell.get_or_init(|| {
        let mut config = RlConfig::default();
        if variant != RlVariant::GnnSeq {
            config.k_max = 3;
        }
        train_ppo(&config.kblock_ladder(), &config, variant, None).unwrap()
    })
}

/// Mean goals-fraction over every episode, accumulated in f64.
fn score(label: &str, params: &PolicyParams, spec: &WorldSpec, episodes: usize) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<String, f64>>> = OnceLock::new();
    let key = format!("{label} {spec:?} {episodes}");
    let mut cache = CACHE.get_or_init(Default::default).lock().unwrap();
    *cache.entry(key).or_insert_with(|| {
        let r = evaluate(params, spec, episodes, &SEEDS).unwrap();
        r.episodes.iter().map(|e| e.goals_fraction as f64).sum::<f64>() / r.episodes.len() as f64
    })
}

fn il_score(arch: Architecture, spec: &WorldSpec) -> f64 {
    score(&arch.to_string(), &blockworld(arch).params, spec, EPISODES)
}

fn object_target() -> ExplainConfig {
    ExplainConfig { target: ExplainTarget::Object, ..ExplainConfig::default() }
}

fn z_share(p: &FeatureProfile) -> f64 {
    let z = p.names.iter().position(|n| n == "z").unwrap();
    p.counts[z] as f64 / p.decisions as f64
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn footprint() -> Verdict {
    let mut parts = vec![];
    let mut pass = true;
    for arch in [Architecture::Sage, Architecture::Attention] {
        let t = blockworld(arch);
        pass &= t.seconds < BUDGET_SECONDS && t.samples == 900;
        parts.push(format!("{arch} {:.0} s on {} samples", t.seconds, t.samples));
    }
    verdict(pass, format!("{} (limit {BUDGET_SECONDS:.0} s)", parts.join(", ")))
}

fn in_distribution() -> Verdict {
    let mut parts = vec![];
    let mut pass = true;
    for arch in [Architecture::Sage, Architecture::Attention] {
        for k in [3, 4] {
            let s = il_score(arch, &WorldSpec::kblock(k, 0));
            pass &= s >= 0.95;
            parts.push(format!("{arch} K={k} {s:.3}"));
        }
    }
    verdict(pass, format!("{} (need >= 0.95)", parts.join(", ")))
}

fn size_generalization() -> Verdict {
    let mut parts = vec![];
    let mut pass = true;
    for arch in [Architecture::Sage, Architecture::Attention] {
        let s = il_score(arch, &WorldSpec::kblock(9, 0));
        pass &= s >= 0.75;
        parts.push(format!("{arch} K=9 {s:.3}"));
    }
    let mut stretch = vec![];
    for arch in [Architecture::Sage, Architecture::Attention] {
        let s = score(&arch.to_string(), &blockworld(arch).params, &WorldSpec::kblock(40, 0), 10);
        stretch.push(format!("{arch} {s:.3}{}", if s >= 0.6 { "" } else { " below 0.6" }));
    }
    verdict(pass, format!("{} (need >= 0.75); stretch K=40, 10 episodes x 3 seeds: {}", parts.join(", "), stretch.join(", ")))
}

fn goal_generalization() -> Verdict {
    let pyramid = il_score(Architecture::Attention, &WorldSpec::pyramid(6, 0));
    let stacks = il_score(Architecture::Attention, &WorldSpec::multi_stack(3, 3, 0));
    let rearrange = il_score(Architecture::Sage, &WorldSpec::rearrange(3, 0));
    verdict(
        pyramid >= 0.95 && stacks >= 0.9 && rearrange >= 0.8,
        format!("attention pyramid-6 {pyramid:.3} (>= 0.95), 3x3 stacks {stacks:.3} (>= 0.9); sage rearrangement {rearrange:.3} (>= 0.8)"),
    )
}

fn architecture_ordering() -> Verdict {
    let mut parts = vec![];
    let mut pass = true;
    for (name, spec) in [("3x3 stacks", WorldSpec::multi_stack(3, 3, 0)), ("rearrangement", WorldSpec::rearrange(3, 0))] {
        let gated = il_score(Architecture::Gated, &spec);
        let sage = il_score(Architecture::Sage, &spec);
        let attention = il_score(Architecture::Attention, &spec);
        pass &= gated < sage && gated < attention;
        parts.push(format!("{name}: gated {gated:.3} vs sage {sage:.3}, attention {attention:.3}"));
    }
    verdict(pass, parts.join("; "))
}

fn rl_ordering() -> Verdict {
    let k3 = WorldSpec::kblock(3, 0);
    let k9 = WorldSpec::kblock(9, 0);
    let mlp = score("rl-mlp", rl(RlVariant::Mlp).params_for(3).unwrap(), &k3, EPISODES);
    let gnn = score("rl-gnn", rl(RlVariant::Gnn).params_for(3).unwrap(), &k3, EPISODES);
    let seq = score("rl-gnn-seq", rl(RlVariant::GnnSeq).params_for(9).unwrap(), &k9, EPISODES);
    let il = il_score(Architecture::Sage, &k9);
    verdict(
        mlp < gnn && seq < il,
        format!("K=3 rl-mlp {mlp:.3} < rl-gnn {gnn:.3}; K=9 rl-gnn-seq {seq:.3} < il-sage {il:.3}"),
    )
}

fn dishwasher_scores() -> Verdict {
    let tb = &dishwasher(Preference::TopBottom).params;
    let lr = &dishwasher(Preference::LeftRight).params;
    let tb10 = score("dish-tb", tb, &WorldSpec::dishwasher(Preference::TopBottom, 10, 0), EPISODES);
    let tb12 = score("dish-tb", tb, &WorldSpec::dishwasher(Preference::TopBottom, 12, 0), EPISODES);
    let lr10 = score("dish-lr", lr, &WorldSpec::dishwasher(Preference::LeftRight, 10, 0), EPISODES);
    verdict(
        tb10 >= 0.9 && tb12 >= 0.7 && lr10 >= 0.6,
        format!("top-bottom 10 {tb10:.3} (>= 0.9), 12 {tb12:.3} (>= 0.7); left-right 10 {lr10:.3} (>= 0.6)"),
    )
}

fn edge_incidence() -> Verdict {
    let params = &blockworld(Architecture::Sage).params;
    let config = object_target();
    let spec = WorldSpec::kblock(3, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut hits, mut total, mut episode) = (0, 0, 0);
    let mut state = reset(&spec.with_seed(episode_seed(0, episode))).unwrap();
    while total < DECISIONS {
        if state.is_done() {
            episode += 1;
            state = reset(&spec.with_seed(episode_seed(0, episode))).unwrap();
        }
        let graph = encode_scene(&state).unwrap();
        let action = select_action(&policy_forward(&graph, params).unwrap(), SelectMode::Argmax, &mut rng);
        let (u, v) = explain_decision(params, &graph, &config).unwrap().top_edge_pairs()[0];
        hits += (u == action.object || v == action.object) as usize;
        total += 1;
        state = step(&state, &action).state;
    }
    let rate = hits as f64 / total as f64;
    verdict(rate >= 0.9, format!("sage K=3: {hits}/{total} top-1 edges touch the chosen object ({rate:.2}, need >= 0.90)"))
}

fn feature_profiles() -> Verdict {
    let spec = WorldSpec::multi_stack(3, 3, 0);
    let config = object_target();
    let mut parts = vec![];
    let mut pass = true;
    let mut il_entropies = vec![];
    for arch in [Architecture::Sage, Architecture::Attention] {
        let p = feature_profile(&blockworld(arch).params, &spec, DECISIONS, &config).unwrap();
        let mut top = p.top(2);
        top.sort();
        pass &= top == ["filled", "z"];
        il_entropies.push(p.entropy());
        parts.push(format!("{arch} top two {top:?} entropy {:.3} z {:.2}", p.entropy(), z_share(&p)));
    }
    let p = feature_profile(rl(RlVariant::GnnSeq).final_params().unwrap(), &spec, DECISIONS, &config).unwrap();
    pass &= il_entropies.iter().all(|&h| p.entropy() < h);
    parts.push(format!("rl-gnn-seq entropy {:.3} z {:.2}", p.entropy(), z_share(&p)));
    verdict(pass, parts.join("; "))
}

fn property_suites() -> Verdict {
    let mut failed = vec![];
    let suites = gradients::SUITE.iter().chain(properties::SUITE);
    let n = suites.clone().count();
    for (name, check) in suites {
        if catch_unwind(check).is_err() {
            failed.push(*name);
        }
    }
    let detail = if failed.is_empty() { format!("{n}/{n} suites pass") } else { format!("failing: {}", failed.join(", ")) };
    verdict(failed.is_empty(), detail)
}

type Criterion = (&'static str, fn() -> Verdict);

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("training footprint", footprint),
        ("in-distribution imitation", in_distribution),
        ("size generalization", size_generalization),
        ("goal-configuration generalization", goal_generalization),
        ("architecture ordering", architecture_ordering),
        ("rl vs imitation ordering", rl_ordering),
        ("dishwasher", dishwasher_scores),
        ("explainer edge incidence", edge_incidence),
        ("feature profile", feature_profiles),
        ("property suites", property_suites),
    ];
    let mut failed = vec![];
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| verdict(false, format!("panicked: {}", panic_message(p))));
        let mark = if v.pass { "PASS" } else { "FAIL" };
        writeln!(std::io::stderr(), "[{mark}] {:02} {name}: {}", i + 1, v.detail).unwrap();
        if !v.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
