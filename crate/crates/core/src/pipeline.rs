//! The end-to-end verification pipeline behind `verify-paper`.
//!
//! Stages: (1) generate and verify the sequence; (2) build the structure
//! tower with structural cross-checks; (3) decide the bounded-round games on
//! every reduct; (4) verify the extension family and check it implies the
//! game verdicts; (5) rigidity lemmas plus automorphism search on the
//! distinguished structures and sampled intermediates; (6) the robust
//! census. Every stage reports pass/fail with timings; the overall verdict
//! is their conjunction.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::extension::{verify_back_and_forth, ProofContext, DEFAULT_BF_BUDGET};
use crate::families::{
    build_good_sequence_with, verify_good_sequence_with, FamilyError, GoodSequence,
    TruncationParams, VerifyOptions,
};
use crate::game::{
    ef_certificate_check, ef_decide, GameConfig, GameError, Winner, DEFAULT_GAME_BUDGET,
};
use crate::models::{build_m1, build_m2, build_mz, build_n1, build_n2, sample_x_with, IndexSet};
use crate::search::{automorphisms, census, rigidity_lemmas, AutCount};
use crate::structure::PartialMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Family,
    Structures,
    Games,
    Extension,
    Rigidity,
    Census,
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "family" => Ok(Stage::Family),
            "structures" => Ok(Stage::Structures),
            "games" | "ef" => Ok(Stage::Games),
            "extension" | "backforth" => Ok(Stage::Extension),
            "rigidity" => Ok(Stage::Rigidity),
            "census" => Ok(Stage::Census),
            other => Err(format!(
                "unknown stage {other:?} (family|structures|games|extension|rigidity|census)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub params: TruncationParams,
    /// Thinning multiplicity used to pick the ordinary-index sample.
    pub c_prime: usize,
    /// Rounds for both the games and the extension verification.
    pub rounds: usize,
    /// Largest reduct index for the game stages. Defaults to `min(2, W-1)`:
    /// residue-classed trace coverage shrinks like `2^{m+1}` against the
    /// class size, so wide reducts are spoiler-won at desk-scale parameters
    /// without contradicting anything the family certifies.
    pub m_max: Option<usize>,
    pub game_budget: u64,
    pub bf_budget: u64,
    pub verify: VerifyOptions,
    /// Run only this stage (later stages still need the earlier artifacts,
    /// which are rebuilt silently).
    pub stage: Option<Stage>,
    pub parallel: bool,
    /// Number of robust index sets in the census stage.
    pub census_sets: usize,
    /// Number of sampled intermediate structures in the rigidity stage.
    pub intermediates: usize,
}

impl PipelineOptions {
    pub fn new(params: TruncationParams) -> Self {
        PipelineOptions {
            params,
            c_prime: 2.min(params.c),
            rounds: 2,
            m_max: None,
            game_budget: DEFAULT_GAME_BUDGET,
            bf_budget: DEFAULT_BF_BUDGET,
            verify: VerifyOptions::default(),
            stage: None,
            parallel: false,
            census_sets: 5,
            intermediates: 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("invalid pipeline configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageOutcome {
    pub name: String,
    pub pass: bool,
    pub seconds: f64,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub params: TruncationParams,
    pub stages: Vec<StageOutcome>,
    pub pass: bool,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn stage(&self, name: &str) -> Option<&StageOutcome> {
        self.stages.iter().find(|s| s.name == name)
    }
}

fn outcome(name: &str, started: Instant, pass: bool, detail: serde_json::Value) -> StageOutcome {
    StageOutcome {
        name: name.to_string(),
        pass,
        seconds: started.elapsed().as_secs_f64(),
        detail,
    }
}

struct GameSpec {
    label: String,
    left: crate::structure::Structure,
    right: crate::structure::Structure,
    pins: PartialMap,
}

fn winner_str(w: Winner) -> &'static str {
    match w {
        Winner::Duplicator => "duplicator",
        Winner::Spoiler => "spoiler",
    }
}

/// Run the configured stages in order; the report's overall `pass` is the
/// conjunction of the stages that ran.
pub fn run_pipeline(opts: &PipelineOptions) -> Result<PipelineReport, PipelineError> {
    opts.params
        .validate()
        .map_err(|e| PipelineError::BadParams(e.to_string()))?;
    if opts.c_prime == 0 || opts.c_prime > opts.params.c {
        return Err(PipelineError::BadConfig(format!(
            "c_prime must be in 1..={}, got {}",
            opts.params.c, opts.c_prime
        )));
    }
    let p = opts.params;
    let m_max = opts.m_max.unwrap_or_else(|| 2.min(p.w - 1));
    if m_max >= p.w {
        return Err(PipelineError::BadConfig(format!(
            "m_max {m_max} out of range (W = {})",
            p.w
        )));
    }
    let class_size = p.lambda / p.w;
    if opts.census_sets > class_size {
        return Err(PipelineError::BadConfig(format!(
            "census_sets {} exceeds residue class size {class_size}",
            opts.census_sets
        )));
    }
    let want = |stage: Stage| opts.stage.is_none() || opts.stage == Some(stage);

    let mut stages: Vec<StageOutcome> = Vec::new();

    // Stage 1: family generation + verification.
    let started = Instant::now();
    let g: Option<GoodSequence> = match build_good_sequence_with(&p, &opts.verify) {
        Ok(g) => {
            if want(Stage::Family) {
                let report = verify_good_sequence_with(&g, &p, &opts.verify);
                stages.push(outcome(
                    "family",
                    started,
                    report.pass,
                    serde_json::to_value(&report).expect("report"),
                ));
            }
            Some(g)
        }
        Err(FamilyError::RetriesExhausted {
            attempts,
            last_failure,
            report,
        }) => {
            stages.push(outcome(
                "family",
                started,
                false,
                json!({
                    "error": format!("generation retries exhausted after {attempts} attempts"),
                    "last_failure": last_failure,
                    "report": *report,
                }),
            ));
            None
        }
        Err(e) => return Err(PipelineError::BadParams(e.to_string())),
    };

    let Some(g) = g else {
        // nothing downstream can run without a verified family
        return Ok(finish(p, stages));
    };

    // Stage 2: structures.
    let n2 = build_n2(&g);
    let n1 = build_n1(&g);
    let x = match sample_x_with(&g, opts.c_prime, p.seed, &opts.verify) {
        Ok(x) => x,
        Err(e) => {
            let started = Instant::now();
            stages.push(outcome(
                "structures",
                started,
                false,
                json!({ "error": format!("index sample failed: {e}") }),
            ));
            return Ok(finish(p, stages));
        }
    };
    let mut x_omega = x.clone();
    x_omega.include_omega = true;
    let m1 = build_m1(&g, &x).expect("sampled set excludes the distinguished point");
    let m2 = build_m2(&g, &x_omega).expect("sampled set with the distinguished point");
    if want(Stage::Structures) {
        let started = Instant::now();
        let mut problems: Vec<String> = Vec::new();
        // the no-distinguished-point structure is literally the restriction
        let keep: BTreeSet<usize> = (0..n2.structure.domain_size() - 1).collect();
        if !n2
            .restrict(&keep)
            .map(|r| r.structure.same_shape(&n1.structure))
            .unwrap_or(false)
        {
            problems.push("dropping the distinguished point does not yield the reduced structure".into());
        }
        // thinned pair differ by exactly the distinguished point
        let keep: BTreeSet<usize> = (0..m2.structure.domain_size() - 1).collect();
        if !m2
            .restrict(&keep)
            .map(|r| r.structure.same_shape(&m1.structure))
            .unwrap_or(false)
        {
            problems.push("thinned structures do not differ by exactly the distinguished point".into());
        }
        // the thinned structure is an induced substructure of the full one
        let keep: BTreeSet<usize> = n1
            .layout
            .iter()
            .filter(|(_, role)| match role {
                crate::models::Role::B(_) => true,
                crate::models::Role::C(a) => x.ordinaries.contains(a),
                crate::models::Role::COmega => false,
            })
            .map(|(&id, _)| id)
            .collect();
        if !n1
            .restrict(&keep)
            .map(|r| r.structure.same_shape(&m1.structure))
            .unwrap_or(false)
        {
            problems.push("thinned structure is not an induced substructure of the full one".into());
        }
        let pass = problems.is_empty();
        stages.push(outcome(
            "structures",
            started,
            pass,
            json!({
                "sizes": {
                    "N2": n2.structure.domain_size(),
                    "N1": n1.structure.domain_size(),
                    "M1": m1.structure.domain_size(),
                    "M2": m2.structure.domain_size(),
                },
                "sample_size": x.ordinaries.len(),
                "problems": problems,
            }),
        ));
    }

    // Stage 3: games on every reduct.
    if want(Stage::Games) {
        let started = Instant::now();
        let mut specs: Vec<GameSpec> = Vec::new();
        for m in 0..=m_max {
            let m1r = m1.reduct(m).expect("reduct in range");
            let m2r = m2.reduct(m).expect("reduct in range");
            let n1r = n1.reduct(m).expect("reduct in range");
            let n2r = n2.reduct(m).expect("reduct in range");
            specs.push(GameSpec {
                label: format!("M1~M2 | m={m}"),
                left: m1r.structure.clone(),
                right: m2r.structure.clone(),
                pins: PartialMap::empty(),
            });
            specs.push(GameSpec {
                label: format!("M1~N1 | m={m}"),
                left: m1r.structure.clone(),
                right: n1r.structure.clone(),
                pins: PartialMap::empty(),
            });
            // pin the least ordinary index of residue m to the distinguished point
            let pin_src = n1r.c_id(m).expect("index m exists");
            let pin_dst = n2r.omega_id().expect("full structure has the point");
            specs.push(GameSpec {
                label: format!("N1~N2 | m={m} pinned"),
                left: n1r.structure.clone(),
                right: n2r.structure.clone(),
                pins: PartialMap::from_pairs([(pin_src, pin_dst)]).expect("single pair"),
            });
        }
        let run_game = |spec: &GameSpec| -> serde_json::Value {
            let t0 = Instant::now();
            let cfg = GameConfig::with_pins(opts.rounds, spec.pins.clone());
            match ef_decide(&spec.left, &spec.right, &cfg, opts.game_budget) {
                Ok(result) => {
                    let cert_ok =
                        ef_certificate_check(&spec.left, &spec.right, &cfg, &result)
                            .unwrap_or(false);
                    json!({
                        "game": spec.label,
                        "winner": winner_str(result.winner),
                        "nodes": result.nodes,
                        "certificate_ok": cert_ok,
                        "seconds": t0.elapsed().as_secs_f64(),
                    })
                }
                Err(GameError::BudgetExceeded { budget }) => json!({
                    "game": spec.label,
                    "error": format!("budget {budget} exceeded"),
                }),
                Err(e) => json!({ "game": spec.label, "error": e.to_string() }),
            }
        };
        let rows: Vec<serde_json::Value> = if opts.parallel {
            specs.par_iter().map(run_game).collect()
        } else {
            specs.iter().map(run_game).collect()
        };
        let pass = rows.iter().all(|r| {
            r["winner"] == json!("duplicator") && r["certificate_ok"] == json!(true)
        });
        stages.push(outcome(
            "games",
            started,
            pass,
            json!({ "rounds": opts.rounds, "games": rows }),
        ));
    }

    // Stage 4: extension family closure, and its implication for the games.
    if want(Stage::Extension) {
        let started = Instant::now();
        let mut rows: Vec<serde_json::Value> = Vec::new();
        let mut pass = true;
        let mut ctxs: Vec<(String, ProofContext)> = Vec::new();
        for m in 0..=m_max {
            match ProofContext::n1n2(&g, m) {
                Ok(ctx) => ctxs.push((format!("N1~N2 | m={m} pinned"), ctx)),
                Err(e) => {
                    rows.push(json!({ "variant": format!("m={m}"), "error": e.to_string() }));
                    pass = false;
                }
            }
        }
        match ProofContext::m1n1(&g, &x) {
            Ok(ctx) => ctxs.push(("M1~N1 | full vocabulary".to_string(), ctx)),
            Err(e) => {
                rows.push(json!({ "variant": "M1~N1", "error": e.to_string() }));
                pass = false;
            }
        }
        for (label, ctx) in &ctxs {
            let t0 = Instant::now();
            let report = verify_back_and_forth(ctx, opts.rounds, opts.bf_budget, p.seed);
            // a family-closure pass must co-occur with the game verdict
            let mut game_winner = None;
            if report.pass {
                let cfg = GameConfig::with_pins(opts.rounds, ctx.pins());
                match ef_decide(
                    &ctx.left.structure,
                    &ctx.right.structure,
                    &cfg,
                    opts.game_budget,
                ) {
                    Ok(result) => game_winner = Some(result.winner),
                    Err(e) => {
                        rows.push(json!({ "variant": label, "error": e.to_string() }));
                        pass = false;
                        continue;
                    }
                }
            }
            let implied_ok = !report.pass || game_winner == Some(Winner::Duplicator);
            if !report.pass || !implied_ok {
                pass = false;
            }
            rows.push(json!({
                "variant": label,
                "closure": report,
                "game_winner": game_winner.map(winner_str),
                "closure_implies_win": implied_ok,
                "seconds": t0.elapsed().as_secs_f64(),
            }));
        }
        stages.push(outcome(
            "extension",
            started,
            pass,
            json!({ "rounds": opts.rounds, "variants": rows }),
        ));
    }

    // Stage 5: rigidity of the distinguished structure and intermediates.
    if want(Stage::Rigidity) {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x5161d);
        let mut subjects: Vec<(String, IndexSet)> = vec![("M2".to_string(), x_omega.clone())];
        for i in 0..opts.intermediates {
            let mut ordinaries = x.ordinaries.clone();
            for alpha in 0..p.lambda {
                if !ordinaries.contains(&alpha) && rng.gen::<bool>() {
                    ordinaries.insert(alpha);
                }
            }
            subjects.push((
                format!("intermediate-{i}"),
                IndexSet {
                    ordinaries,
                    include_omega: true,
                },
            ));
        }
        let mut rows = Vec::new();
        let mut pass = true;
        for (label, z) in &subjects {
            let t0 = Instant::now();
            let built = match build_mz(&g, z) {
                Ok(b) => b,
                Err(e) => {
                    rows.push(json!({ "structure": label, "error": e.to_string() }));
                    pass = false;
                    continue;
                }
            };
            let lemmas = match rigidity_lemmas(&built, &g) {
                Ok(r) => r,
                Err(e) => {
                    rows.push(json!({ "structure": label, "error": e.to_string() }));
                    pass = false;
                    continue;
                }
            };
            let aut = automorphisms(&built.structure, 2);
            let rigid = matches!(aut.count, AutCount::Exact(1));
            // the lemmas are the proof; the search must agree
            let implied_ok = !lemmas.pass || rigid;
            if !lemmas.pass || !rigid || !implied_ok {
                pass = false;
            }
            rows.push(json!({
                "structure": label,
                "domain": built.structure.domain_size(),
                "lemmas": lemmas,
                "rigid": rigid,
                "search_nodes": aut.stats.nodes,
                "seconds": t0.elapsed().as_secs_f64(),
            }));
        }
        stages.push(outcome("rigidity", started, pass, json!({ "subjects": rows })));
    }

    // Stage 6: robust census.
    if want(Stage::Census) {
        let started = Instant::now();
        let class_members: Vec<Vec<usize>> = (0..p.w)
            .map(|k| (0..p.lambda).filter(|a| a % p.w == k).collect())
            .collect();
        // rotation-distinct equal-size windows, robust at c by construction
        let zs: Vec<IndexSet> = (0..opts.census_sets)
            .map(|t| {
                let mut ordinaries = BTreeSet::new();
                for members in &class_members {
                    for j in 0..p.c {
                        ordinaries.insert(members[(t + j) % members.len()]);
                    }
                }
                IndexSet {
                    ordinaries,
                    include_omega: true,
                }
            })
            .collect();
        for (i, a) in zs.iter().enumerate() {
            for b in zs.iter().skip(i + 1) {
                if a.ordinaries == b.ordinaries {
                    return Err(PipelineError::BadConfig(
                        "census windows collide; reduce census_sets".to_string(),
                    ));
                }
            }
        }
        match census(&g, &zs, p.c) {
            Ok(result) => {
                let diagonal_ok = (0..result.verdicts.len()).all(|i| result.verdicts[i][i]);
                let off_ok = result.off_diagonal_all_nonisomorphic();
                stages.push(outcome(
                    "census",
                    started,
                    diagonal_ok && off_ok,
                    json!({
                        "sets": zs.len(),
                        "set_size": zs[0].ordinaries.len(),
                        "diagonal_isomorphic": diagonal_ok,
                        "off_diagonal_nonisomorphic": off_ok,
                        "verdicts": result.verdicts,
                    }),
                ));
            }
            Err(e) => {
                stages.push(outcome(
                    "census",
                    started,
                    false,
                    json!({ "error": e.to_string() }),
                ));
            }
        }
    }

    Ok(finish(p, stages))
}

fn finish(params: TruncationParams, stages: Vec<StageOutcome>) -> PipelineReport {
    let pass = !stages.is_empty() && stages.iter().all(|s| s.pass);
    PipelineReport {
        params,
        stages,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_pipeline_passes() {
        let mut opts = PipelineOptions::new(TruncationParams::small());
        opts.c_prime = 1;
        opts.census_sets = 4; // residue classes only hold 4 members
        let report = run_pipeline(&opts).unwrap();
        assert!(report.pass, "{}", report.to_json());
        assert_eq!(report.stages.len(), 6);
    }

    #[test]
    fn stage_filter_runs_one_stage() {
        let mut opts = PipelineOptions::new(TruncationParams::small());
        opts.c_prime = 1;
        opts.stage = Some(Stage::Rigidity);
        let report = run_pipeline(&opts).unwrap();
        assert_eq!(report.stages.len(), 1);
        assert_eq!(report.stages[0].name, "rigidity");
        assert!(report.pass, "{}", report.to_json());
    }

    #[test]
    fn infeasible_separation_fails_stage_one() {
        // N > 2^{W+1}: the separation condition is impossible, generation
        // must exhaust its retries and the pipeline must stop at stage 1.
        let params = TruncationParams {
            n: 64,
            w: 3,
            lambda: 192,
            c: 3,
            d: 3,
            s: 2,
            m_cap: 2,
            n_cap: 1,
            t: 1,
            seed: 1,
            retries: 3,
        };
        let opts = PipelineOptions::new(params);
        let report = run_pipeline(&opts).unwrap();
        assert!(!report.pass);
        assert_eq!(report.stages.len(), 1);
        assert_eq!(report.stages[0].name, "family");
        let text = report.stages[0].detail.to_string();
        assert!(text.contains("separation") || text.contains("independence"));
    }

    #[test]
    fn bad_params_are_an_error_not_a_failed_report() {
        let mut params = TruncationParams::small();
        params.w = 1;
        let opts = PipelineOptions::new(params);
        assert!(matches!(
            run_pipeline(&opts),
            Err(PipelineError::BadParams(_))
        ));
    }
}
