//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance runner. Nothing here calls the code it checks.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use r2n_core::autodiff::{NodeId, ParamStore, Scalar, Tape, Tensor};
use r2n_core::eval::{Protocol, TripleScorer};
use r2n_core::ground::{atom_universe, ground_rules, AtomId, FactorGraph, GroundConfig};
use r2n_core::kg::{EntityId, KnowledgeGraph, RelationId, Triple, Vocabulary};
use r2n_core::kge::{KgeConfig, KgeModel, KgeSpec, ScorerKind};
use r2n_core::pipeline::experiment::kge_vs_r2n;
use r2n_core::r2n::{R2nConfig, R2nModel};
use r2n_core::rules::{parse_rule, HornRule, RuleAtom, Var};
use r2n_core::synthetic::{SyntheticConfig, SyntheticKg};

pub fn graph_from(entities: usize, relations: usize, triples: impl IntoIterator<Item = (u32, u32, u32)>) -> KnowledgeGraph {
    let mut v = Vocabulary::new();
    for i in 0..entities {
        v.intern_entity(&format!("e{i}"));
    }
    for r in 0..relations {
        v.intern_relation(&format!("R{r}"));
    }
    let ts = triples.into_iter().map(|(h, r, t)| Triple::new(EntityId(h), RelationId(r), EntityId(t)));
    KnowledgeGraph::from_triples(Arc::new(v), ts).0
}

/// Up to `max_e` entities, `max_r` relations and `max_t` triples. Self-loops
/// are allowed; duplicates collapse.
pub fn random_graph(rng: &mut ChaCha8Rng, max_e: usize, max_r: usize, max_t: usize) -> KnowledgeGraph {
    let n_e = rng.gen_range(2..=max_e);
    let n_r = rng.gen_range(1..=max_r);
    let n_t = rng.gen_range(1..=max_t);
    let ts: Vec<(u32, u32, u32)> = (0..n_t)
        .map(|_| (rng.gen_range(0..n_e as u32), rng.gen_range(0..n_r as u32), rng.gen_range(0..n_e as u32)))
        .collect();
    graph_from(n_e, n_r, ts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleStats {
    pub support: u64,
    pub head_coverage: f64,
    pub std_confidence: f64,
    pub pca_confidence: f64,
}

/// Dense `facts[r][h][t]` lookup.
struct Dense {
    n: usize,
    facts: Vec<bool>,
}

impl Dense {
    fn new(kg: &KnowledgeGraph) -> Self {
        let n = kg.num_entities();
        let mut facts = vec![false; kg.num_relations() * n * n];
        for t in kg.triples() {
            facts[(t.relation.index() * n + t.head.index()) * n + t.tail.index()] = true;
        }
        Dense { n, facts }
    }

    fn holds(&self, r: usize, h: usize, t: usize) -> bool {
        self.facts[(r * self.n + h) * self.n + t]
    }
}

/// Every closed rule over variables `x`, `y`, `z` with one or two body
/// atoms whose arguments differ, by nested loops over all entity
/// assignments. The tautology `R(x,y) => R(x,y)` is not a rule.
pub fn brute_force_mine(kg: &KnowledgeGraph, max_body_atoms: usize, min_support: u64, min_hc: f64) -> BTreeMap<HornRule, OracleStats> {
    let dense = Dense::new(kg);
    let n = kg.num_entities();
    let n_rel = kg.num_relations();
    let mut atoms = Vec::new();
    for r in 0..n_rel {
        for s in 0..3u8 {
            for o in 0..3u8 {
                if s != o {
                    atoms.push((r, s, o));
                }
            }
        }
    }
    let mut bodies: Vec<Vec<(usize, u8, u8)>> = Vec::new();
    for (i, &a) in atoms.iter().enumerate() {
        bodies.push(vec![a]);
        if max_body_atoms >= 2 {
            for &b in &atoms[i + 1..] {
                bodies.push(vec![a, b]);
            }
        }
    }
    let closed = |body: &[(usize, u8, u8)]| {
        let mut count = [1usize, 1, 0];
        for &(_, s, o) in body {
            count[s as usize] += 1;
            count[o as usize] += 1;
        }
        count.iter().all(|&c| c == 0 || c >= 2)
    };
    let mut heads = vec![0u64; n_rel];
    let mut has_subject = vec![vec![false; n]; n_rel];
    for t in kg.triples() {
        heads[t.relation.index()] += 1;
        has_subject[t.relation.index()][t.head.index()] = true;
    }
    let mut out = BTreeMap::new();
    for body in bodies.iter().filter(|b| closed(b)) {
        let uses_z = body.iter().any(|&(_, s, o)| s == 2 || o == 2);
        let mut pairs = Vec::new();
        for x in 0..n {
            for y in 0..n {
                let sat = |z: usize| {
                    let val = [x, y, z];
                    body.iter().all(|&(r, s, o)| dense.holds(r, val[s as usize], val[o as usize]))
                };
                let ok = if uses_z { (0..n).any(sat) } else { sat(0) };
                if ok {
                    pairs.push((x, y));
                }
            }
        }
        if pairs.is_empty() {
            continue;
        }
        for r in 0..n_rel {
            if body.contains(&(r, 0, 1)) || heads[r] == 0 {
                continue;
            }
            let support = pairs.iter().filter(|&&(x, y)| dense.holds(r, x, y)).count() as u64;
            let pca = pairs.iter().filter(|&&(x, _)| has_subject[r][x]).count() as u64;
            let hc = support as f64 / heads[r] as f64;
            if support < min_support.max(1) || hc < min_hc {
                continue;
            }
            let rule_atoms: Vec<RuleAtom> = body.iter().map(|&(rel, s, o)| RuleAtom::new(RelationId(rel as u32), Var(s), Var(o))).collect();
            let rule = HornRule::new(rule_atoms, RelationId(r as u32)).expect("closed rule");
            let stats = OracleStats {
                support,
                head_coverage: hc,
                std_confidence: support as f64 / pairs.len() as f64,
                pca_confidence: support as f64 / pca as f64,
            };
            let prev = out.insert(rule, stats);
            assert!(prev.is_none_or(|p| p == stats), "two spellings of one rule disagree");
        }
    }
    out
}

/// Rank by sorting: position of the middle of the target's tied block in
/// the descending score list, 1-based.
pub fn sorted_rank(target: f32, competitors: &[f32]) -> f64 {
    let mut all: Vec<f32> = competitors.to_vec();
    all.push(target);
    all.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let first = all.iter().position(|&s| s == target).unwrap();
    let last = all.iter().rposition(|&s| s == target).unwrap();
    (first + last) as f64 / 2.0 + 1.0
}

/// Raw and filtered rank of `t` on one side by scoring every candidate.
pub fn exhaustive_rank(scorer: &dyn TripleScorer, t: &Triple, head: bool, n_entities: usize, known: &HashSet<Triple>) -> (f64, f64) {
    let target = scorer.score(t);
    let mut raw = Vec::new();
    let mut filtered = Vec::new();
    for e in 0..n_entities as u32 {
        let c = if head { Triple::new(EntityId(e), t.relation, t.tail) } else { Triple::new(t.head, t.relation, EntityId(e)) };
        if c == *t {
            continue;
        }
        let s = scorer.score(&c);
        raw.push(s);
        if !known.contains(&c) {
            filtered.push(s);
        }
    }
    (sorted_rank(target, &raw), sorted_rank(target, &filtered))
}

/// MRR and Hits@{1,3,10} from ranks, spelled out independently.
pub fn summarize(ranks: &[f64]) -> [f64; 4] {
    let n = ranks.len() as f64;
    let mut acc = [0.0; 4];
    for &r in ranks {
        acc[0] += 1.0 / r;
        for (k, cut) in [1.0, 3.0, 10.0].iter().enumerate() {
            if r <= *cut {
                acc[k + 1] += 1.0;
            }
        }
    }
    acc.map(|a| a / n)
}

/// Central-difference gradient of the scalar `f` for every parameter value.
pub fn numeric_grad(store: &ParamStore<f64>, f: &dyn Fn(&mut Tape<f64>) -> NodeId, eps: f64) -> Vec<Vec<f64>> {
    let eval = |s: &ParamStore<f64>| {
        let mut tape = Tape::new(s);
        let l = f(&mut tape);
        tape.value(l).data()[0]
    };
    let mut work = store.clone();
    store
        .ids()
        .map(|p| {
            (0..store.get(p).data().len())
                .map(|i| {
                    let x = store.get(p).data()[i];
                    work.get_mut(p).data_mut()[i] = x + eps;
                    let up = eval(&work);
                    work.get_mut(p).data_mut()[i] = x - eps;
                    let down = eval(&work);
                    work.get_mut(p).data_mut()[i] = x;
                    (up - down) / (2.0 * eps)
                })
                .collect()
        })
        .collect()
}

/// Relative error `|g - g_fd| / max(|g|, |g_fd|)` over all parameters.
pub fn gradient_error(store: &ParamStore<f64>, f: &dyn Fn(&mut Tape<f64>) -> NodeId) -> f64 {
    let mut tape = Tape::new(store);
    let l = f(&mut tape);
    let g = tape.backward(l).expect("backward");
    let num = numeric_grad(store, f, 1e-6);
    let (mut diff, mut a2, mut b2) = (0.0f64, 0.0f64, 0.0f64);
    for (p, fd) in store.ids().zip(&num) {
        let zeros = vec![0.0; fd.len()];
        let an = g.get(p).unwrap_or(&zeros);
        for (x, y) in an.iter().zip(fd) {
            diff += (x - y).powi(2);
            a2 += x * x;
            b2 += y * y;
        }
    }
    let scale = a2.max(b2).sqrt();
    if scale < 1e-12 {
        diff.sqrt()
    } else {
        diff.sqrt() / scale
    }
}

fn kge_with<T: Scalar>(kg: &KnowledgeGraph, d: usize, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> KgeModel {
    let spec = KgeSpec { scorer: ScorerKind::DistMult, dim: d, n_entities: kg.num_entities(), n_relations: kg.num_relations() };
    KgeModel::new(spec, store, rng).unwrap()
}

pub fn r2n_model<T: Scalar>(kg: &KnowledgeGraph, g: &FactorGraph, d: usize, config: R2nConfig, seed: u64) -> (R2nModel, ParamStore<T>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kge = kge_with(kg, d, &mut store, &mut rng);
    let m = R2nModel::new(kge, g.rules(), kg.vocab(), config, &mut store, &mut rng).unwrap();
    (m, store)
}

/// Entities a, b, c; relations R0..R3; facts R0(a,b) and R3(a,c); rules
/// R0 => R1 and R1 => R2 grounded without the premise filter, so
/// R2(a,b) is two hops from R0(a,b) and R3(a,c) is in no grounding.
pub fn chain_fixture() -> (KnowledgeGraph, FactorGraph) {
    let kg = graph_from(3, 4, [(0, 0, 1), (0, 3, 2)]);
    let rules = vec![parse_rule("R0(x,y) => R1(x,y)", kg.vocab()).unwrap(), parse_rule("R1(x,y) => R2(x,y)", kg.vocab()).unwrap()];
    let cfg = GroundConfig { premise_filter: false, ..GroundConfig::default() };
    let g = ground_rules(&rules, &kg, atom_universe(kg.triples(), &[]), &cfg).unwrap();
    (kg, g)
}

/// A premise-filtered graph with at most ten atoms, mixing a one-atom and a
/// two-atom rule.
pub fn small_fixture() -> (KnowledgeGraph, FactorGraph) {
    let kg = graph_from(4, 3, [(0, 0, 1), (1, 1, 2), (1, 0, 2), (2, 1, 3), (3, 2, 0)]);
    let rules = vec![
        parse_rule("R0(x,y) => R1(x,y)", kg.vocab()).unwrap(),
        parse_rule("R0(x,z1) & R1(z1,y) => R2(x,y)", kg.vocab()).unwrap(),
    ];
    let g = ground_rules(&rules, &kg, atom_universe(kg.triples(), &[]), &GroundConfig::default()).unwrap();
    assert!(g.num_atoms() <= 10 && g.num_factors() >= 3, "{} atoms, {} factors", g.num_atoms(), g.num_factors());
    (kg, g)
}

/// Settings for the synthetic lift check: DistMult alone against R2N with
/// the planted rules.
pub fn lift_configs(seed: u64) -> (KgeConfig, R2nConfig) {
    let kge = KgeConfig { scorer: ScorerKind::DistMult, dim: 64, epochs: 100, lr: 1e-2, batch: 256, seed, ..KgeConfig::default() };
    let r2n = R2nConfig { factor_dim: 16, epochs: 30, lr: 1e-3, batch: 256, seed: seed ^ 0xabcd, ..R2nConfig::default() };
    (kge, r2n)
}

/// Filtered MRR of DistMult and of R2N on the synthetic graph for `seed`.
pub fn synthetic_lift(seed: u64) -> (f64, f64) {
    let data = SyntheticKg::generate(&SyntheticConfig { seed, ..SyntheticConfig::default() });
    let known: HashSet<Triple> = data.full.triples().iter().copied().collect();
    let (kge, r2n) = lift_configs(seed);
    let cmp = kge_vs_r2n(&data.train, &data.test, &known, &data.rules, &kge, &r2n, &GroundConfig::default(), Protocol::default())
        .expect("synthetic run");
    (cmp.kge.filtered.mrr, cmp.r2n.filtered.mrr)
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

pub type Loss = Box<dyn Fn(&mut Tape<f64>) -> NodeId>;

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `sum(out * w)` for a fixed random `w`, so every output entry gets its
/// own weight in the scalar being differentiated.
fn project(tape: &mut Tape<f64>, out: NodeId, w: &Tensor<f64>) -> NodeId {
    let wn = tape.input(w.clone());
    let m = tape.mul(out, wn).unwrap();
    tape.sum_all(m)
}

/// One scalar loss per differentiable operation, with random shapes and
/// values drawn from `seed`. Inputs of `recip` and the clamped `bce` are kept
/// away from their singular points.
pub fn op_cases(seed: u64) -> Vec<(&'static str, ParamStore<f64>, Loss)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n, k) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
    let mut cases: Vec<(&'static str, ParamStore<f64>, Loss)> = Vec::new();

    let unary = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        let mut s = ParamStore::new();
        let a = s.add("a", uniform(rng, m, n, lo, hi)).unwrap();
        (s, a, uniform(rng, m, n, -1.0, 1.0))
    };
    macro_rules! elementwise {
        ($name:expr, $lo:expr, $hi:expr, |$t:ident, $x:ident| $body:expr) => {{
            let (s, a, w) = unary(&mut rng, $lo, $hi);
            let f: Loss = Box::new(move |$t: &mut Tape<f64>| {
                let $x = $t.param(a);
                let out = $body;
                project($t, out, &w)
            });
            cases.push(($name, s, f));
        }};
    }
    elementwise!("sigmoid", -3.0, 3.0, |t, x| t.sigmoid(x));
    elementwise!("relu", -1.0, 1.0, |t, x| t.relu(x));
    elementwise!("add_scalar", -1.0, 1.0, |t, x| t.add_scalar(x, 0.7));
    elementwise!("scale", -1.0, 1.0, |t, x| t.scale(x, -1.3));
    elementwise!("recip", 0.5, 2.0, |t, x| t.recip(x));
    elementwise!("param", -1.0, 1.0, |_t, x| x);

    for name in ["add", "sub", "mul"] {
        let mut s = ParamStore::new();
        let a = s.add("a", uniform(&mut rng, m, n, -1.0, 1.0)).unwrap();
        let b = s.add("b", uniform(&mut rng, m, n, -1.0, 1.0)).unwrap();
        let w = uniform(&mut rng, m, n, -1.0, 1.0);
        let f: Loss = Box::new(move |t: &mut Tape<f64>| {
            let (x, y) = (t.param(a), t.param(b));
            let out = match name {
                "add" => t.add(x, y),
                "sub" => t.sub(x, y),
                _ => t.mul(x, y),
            }
            .unwrap();
            project(t, out, &w)
        });
        cases.push((name, s, f));
    }
    {
        let mut s = ParamStore::new();
        let a = s.add("a", uniform(&mut rng, m, k, -1.0, 1.0)).unwrap();
        let b = s.add("b", uniform(&mut rng, k, n, -1.0, 1.0)).unwrap();
        let w = uniform(&mut rng, m, n, -1.0, 1.0);
        let f: Loss = Box::new(move |t: &mut Tape<f64>| {
            let (x, y) = (t.param(a), t.param(b));
            let out = t.matmul(x, y).unwrap();
            project(t, out, &w)
        });
        cases.push(("matmul", s, f));
    }
    {
        let mut s = ParamStore::new();
        let a = s.add("a", uniform(&mut rng, m, n, -1.0, 1.0)).unwrap();
        let b = s.add("b", uniform(&mut rng, 1, n, -1.0, 1.0)).unwrap();
        let w = uniform(&mut rng, m, n, -1.0, 1.0);
        let f: Loss = Box::new(move |t: &mut Tape<f64>| {
            let (x, y) = (t.param(a), t.param(b));
            let out = t.add_bias(x, y).unwrap();
            project(t, out, &w)
        });
        cases.push(("add_bias", s, f));
    }
    {
        let mut s = ParamStore::new();
        let a = s.add("a", uniform(&mut rng, m, n, -1.0, 1.0)).unwrap();
        let b = s.add("b", uniform(&mut rng, m, k, -1.0, 1.0)).unwrap();
        let w = uniform(&mut rng, m, n + k + n, -1.0, 1.0);
        let f: Loss = Box::new(move |t: &mut Tape<f64>| {
            let (x, y) = (t.param(a), t.param(b));
            let out = t.concat(&[x, y, x]).unwrap();
            project(t, out, &w)
        });
        cases.push(("concat", s, f));
    }
    {
        let (s, a, _) = unary(&mut rng, -1.0, 1.0);
        let w = uniform(&mut rng, m, 1, -1.0, 1.0);
        let f: Loss = Box::new(move |t: &mut Tape<f64>| {
            let x = t.param(a);
            let out = t.sum_rows(x);
            project(t, out, &w)
        });
        cases.push(("sum_rows", s, f));
    }
    {
        let (s, a, _) = unary(&mut rng, -1.0, 1.0);
        let w = uniform(&mut rng, m, 1, -1.0, 1.0);
        let f: Loss = Box::new(move |t: &mut Tape<f64>| {
            let x = t.param(a);
            let out = t.norm_rows(x);
            project(t, out, &w)
        });
        cases.push(("norm_rows", s, f));
    }
    {
        let (s, a, _) = unary(&mut rng, -1.0, 1.0);
        let f: Loss = Box::new(move |t: &mut Tape<f64>| {
            let x = t.param(a);
            let sq = t.mul(x, x).unwrap();
            t.sum_all(sq)
        });
        cases.push(("sum_all", s, f));
    }
    {
        let rows = rng.gen_range(2..6);
        let mut s = ParamStore::new();
        let a = s.add("table", uniform(&mut rng, rows, n, -1.0, 1.0)).unwrap();
        let idx: Vec<usize> = (0..m + 1).map(|_| rng.gen_range(0..rows)).collect();
        let w = uniform(&mut rng, m + 1, n, -1.0, 1.0);
        let (idx2, w2) = (idx.clone(), w.clone());
        let f: Loss = Box::new(move |t: &mut Tape<f64>| {
            let out = t.gather_param(a, &idx).unwrap();
            project(t, out, &w)
        });
        cases.push(("gather_param", s.clone(), f));
        let g: Loss = Box::new(move |t: &mut Tape<f64>| {
            let x = t.param(a);
            let out = t.gather(x, &idx2).unwrap();
            project(t, out, &w2)
        });
        cases.push(("gather", s, g));
    }
    {
        let (s, a, _) = unary(&mut rng, -1.0, 1.0);
        let out_rows = rng.gen_range(1..4);
        let idx: Vec<usize> = (0..m).map(|_| rng.gen_range(0..out_rows)).collect();
        let w = uniform(&mut rng, out_rows, n, -1.0, 1.0);
        let f: Loss = Box::new(move |t: &mut Tape<f64>| {
            let x = t.param(a);
            let out = t.scatter_add_rows(x, &idx, out_rows).unwrap();
            project(t, out, &w)
        });
        cases.push(("scatter_add_rows", s, f));
    }
    {
        let mut s = ParamStore::new();
        let p = s.add("p", uniform(&mut rng, m, 1, 0.05, 0.95)).unwrap();
        let z = s.add("z", uniform(&mut rng, m, 1, -4.0, 4.0)).unwrap();
        let targets: Vec<f64> = (0..m).map(|_| rng.gen_range(0..2) as f64).collect();
        let t2 = targets.clone();
        let f: Loss = Box::new(move |t: &mut Tape<f64>| {
            let x = t.param(p);
            t.bce(x, &targets).unwrap()
        });
        cases.push(("bce", s.clone(), f));
        let g: Loss = Box::new(move |t: &mut Tape<f64>| {
            let x = t.param(z);
            t.bce_logits(x, &t2).unwrap()
        });
        cases.push(("bce_logits", s, g));
    }
    cases
}

/// Logit-BCE of an R2N forward over every atom of `g`, with alternating
/// targets, as a function of all parameters (KGE tables included).
pub fn r2n_loss(model: R2nModel, g: &FactorGraph) -> Loss {
    let atoms: Vec<AtomId> = (0..g.num_atoms() as u32).map(AtomId).collect();
    let targets: Vec<f64> = (0..atoms.len()).map(|i| (i % 2) as f64).collect();
    let g = g.clone();
    Box::new(move |t: &mut Tape<f64>| {
        let z = model.forward_logits(t, &g, &atoms).unwrap();
        t.bce_logits(z, &targets).unwrap()
    })
}
