//! Three operations over a TOML experiment config, each returning JSON text.

use serde_json::json;
use wasm_bindgen::prelude::*;

use extremal::config::ExperimentConfig;
use extremal::harness::par_map_seeds;
use extremal::integrability::{classify_integrability, MChoice};
use extremal::integrals::sample_joint_indexed;
use extremal::integrand::Integrand;
use extremal::measure::MeasureSpace;

/// Upper bound on draws per call so the page stays responsive.
const MAX_DRAWS: usize = 20_000;

type Loaded = (ExperimentConfig, MeasureSpace, Vec<(String, Integrand)>);

fn load(src: &str) -> Result<Loaded, String> {
    let cfg = ExperimentConfig::parse(src).map_err(|e| e.to_string())?;
    let space = cfg.build_space().map_err(|e| e.to_string())?;
    let fs = cfg.build_integrands(&space).map_err(|e| e.to_string())?;
    if fs.is_empty() {
        return Err("the config declares no integrands".into());
    }
    Ok((cfg, space, fs))
}

/// Parses the config and lists each integrand in canonical form with its order.
#[wasm_bindgen]
pub fn validate(src: &str) -> Result<String, String> {
    let (cfg, _, fs) = load(src)?;
    let items: Vec<_> = cfg
        .exprs()
        .iter()
        .zip(&fs)
        .map(|((name, e), (_, f))| json!({ "name": name, "expr": e.to_string(), "order": f.k() }))
        .collect();
    Ok(json!({ "alpha": cfg.alpha, "digest": cfg.digest(), "integrands": items }).to_string())
}

/// Moment-condition report for every integrand.
#[wasm_bindgen]
pub fn classify(src: &str) -> Result<String, String> {
    let (cfg, space, fs) = load(src)?;
    let mut out = Vec::new();
    for (name, f) in &fs {
        let r = classify_integrability(f, &space, cfg.alpha, MChoice::Default).map_err(|e| e.to_string())?;
        out.push(json!({ "name": name, "report": r }));
    }
    Ok(serde_json::Value::Array(out).to_string())
}

/// Joint draws of all integrands, one array per integrand.
#[wasm_bindgen]
pub fn sample(src: &str, draws: usize) -> Result<String, String> {
    let (cfg, space, fs) = load(src)?;
    if draws == 0 || draws > MAX_DRAWS {
        return Err(format!("draws must lie in 1..={MAX_DRAWS}"));
    }
    let pairs: Vec<(&Integrand, f64)> = fs.iter().map(|(_, f)| (f, cfg.alpha)).collect();
    let rows = par_map_seeds(draws, cfg.seed, 1, |s, _| {
        sample_joint_indexed(&pairs, &space, &cfg.sample_config(s)).map(|j| j.values)
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let columns: Vec<_> = fs
        .iter()
        .enumerate()
        .map(|(i, (name, _))| json!({ "name": name, "values": rows.iter().map(|r| r[i]).collect::<Vec<_>>() }))
        .collect();
    Ok(json!({ "seed": cfg.seed, "columns": columns }).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: &str = "seed = 3\nalpha = 1.0\n[space]\nkind = \"unit-interval\"\n\
        [[integrand]]\nname = \"f\"\nexpr = \"ind([0, 0.5) x [0.5, 1))\"\n";

    #[test]
    fn validate_lists_integrands() {
        let v: serde_json::Value = serde_json::from_str(&validate(SRC).unwrap()).unwrap();
        assert_eq!(v["integrands"][0]["order"], 2);
        assert_eq!(v["integrands"][0]["name"], "f");
    }

    #[test]
    fn errors_carry_positions() {
        let err = validate("seed = 3\nalpha = \n").unwrap_err();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn classify_reports_verdicts() {
        let v: serde_json::Value = serde_json::from_str(&classify(SRC).unwrap()).unwrap();
        assert!(v[0]["report"]["verdict"].is_string());
    }

    #[test]
    fn sample_is_seeded() {
        let a = sample(SRC, 50).unwrap();
        assert_eq!(a, sample(SRC, 50).unwrap());
        let v: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["columns"][0]["values"].as_array().unwrap().len(), 50);
        assert!(sample(SRC, 0).is_err());
    }
}
