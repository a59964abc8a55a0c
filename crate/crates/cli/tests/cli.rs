use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use slrmig::migmodels::{produce_flows, ProductionFunction};
use slrmig::{ModelSpec64, Zone64, ZoneGraph64};

const BG_HEADER: &str = "bg_id,county_id,hu_2000,hu_2010,ppu,gq,af_1ft,af_2ft,af_3ft,af_4ft,af_5ft,af_6ft\n";

fn slrmig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slrmig"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

/// Five counties on the equator; c0 holds 1000 people, a quarter flooded at 6 ft.
fn strip(dir: &Path) -> (PathBuf, PathBuf) {
    let mut zones = String::from("id,name,lat,lon,population,coastal\n");
    let mut bgs = String::from(BG_HEADER);
    for k in 0..5 {
        zones.push_str(&format!("c{k},County {k},0,{k},0,{}\n", (k == 0) as u8));
        let (hu, af) = if k == 0 {
            (400, "0,0,0.05,0.1,0.2,0.25")
        } else {
            (800, "0,0,0,0,0,0")
        };
        bgs.push_str(&format!("b{k},c{k},{hu},{hu},2.5,0,{af}\n"));
    }
    (write(dir, "zones.csv", &zones), write(dir, "bgs.csv", &bgs))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count() - 1
}

fn simulate(zones: &Path, bgs: &Path, out: &Path, scenario: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "--out",
        s(out),
        "simulate",
        "--zones",
        s(zones),
        "--block-groups",
        s(bgs),
        "--scenario",
        scenario,
        "--year",
        "2100",
    ];
    args.extend_from_slice(extra);
    slrmig(&args)
}

#[test]
fn validate_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (zones, bgs) = strip(dir.path());
    let ok = slrmig(&["validate", "--zones", s(&zones), "--block-groups", s(&bgs)]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("0 error(s)"));

    let orphan = write(dir.path(), "orphan.csv", &format!("{BG_HEADER}b9,nowhere,1,2,2.5,0,0,0,0,0,0,0\n"));
    let o = slrmig(&["validate", "--zones", s(&zones), "--block-groups", s(&orphan)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("b9 -> nowhere"));

    let dec = write(
        dir.path(),
        "dec.csv",
        &format!("{BG_HEADER}b0,c0,1,2,2.5,0,0,0,0,0,0,0\nb1,c1,1,2,2.5,0,0.2,0.1,0.3,0.4,0.5,0.6\n"),
    );
    let o = slrmig(&["validate", "--zones", s(&zones), "--block-groups", s(&dec)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains(":3:"), "{}", stdout(&o));
}

#[test]
fn simulate_effects_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let (zones, bgs) = strip(dir.path());
    let run_a = dir.path().join("a");
    let o = simulate(&zones, &bgs, &run_a, "high", &["--threads", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let climate = fs::read_to_string(run_a.join("T_climate.csv")).unwrap();
    let total: f64 = climate
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 250.0).abs() < 1e-9);
    assert!(climate.lines().skip(1).all(|l| l.starts_with("c0:A,") && l.contains(":U,")));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 4);

    // Same inputs, more threads: identical bytes.
    let run_b = dir.path().join("b");
    assert!(simulate(&zones, &bgs, &run_b, "high", &["--threads", "8"]).status.success());
    for f in ["T.csv", "T_climate.csv", "T_standard.csv", "split.csv"] {
        assert_eq!(fs::read(run_a.join(f)).unwrap(), fs::read(run_b.join(f)).unwrap(), "{f}");
    }

    let none = dir.path().join("none");
    assert!(simulate(&zones, &bgs, &none, "none", &[]).status.success());
    assert_eq!(data_rows(&none.join("T_climate.csv")), 0);

    let base = dir.path().join("base");
    let o = slrmig(&[
        "--out", s(&base), "baseline", "--zones", s(&zones), "--block-groups", s(&bgs), "--year", "2100",
    ]);
    assert!(o.status.success());

    let eff = dir.path().join("eff");
    let o = slrmig(&["--out", s(&eff), "effects", "--scenario-dir", s(&run_a), "--baseline-dir", s(&base)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(eff.join("effects.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "county_id,pop,affected_pop,in_scenario,in_baseline,extra,extra_flooded,extra_unflooded,flag_d0.5,flag_d1,flag_d3,flag_d6,flag_d9"
    );
    assert!(stdout(&o).contains("directly affected: 250.0"));

    let same = dir.path().join("same");
    let o = slrmig(&["--out", s(&same), "effects", "--scenario-dir", s(&base), "--baseline-dir", s(&base)]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(same.join("effects.json")).unwrap()).unwrap();
    for c in report["counties"].as_array().unwrap() {
        assert_eq!(c["extra"], 0.0);
    }

    // Different county set: registry mismatch is an input error.
    let other = dir.path().join("other");
    fs::create_dir_all(&other).unwrap();
    let z2 = write(&other, "z.csv", "id,name,lat,lon,population,coastal\nq,Q,0,0,10,0\nr,R,0,1,10,0\n");
    let b2 = write(&other, "b.csv", BG_HEADER);
    let run_o = other.join("run");
    assert!(slrmig(&["--out", s(&run_o), "baseline", "--zones", s(&z2), "--block-groups", s(&b2), "--year", "2100"])
        .status
        .success());
    let o = slrmig(&["--out", s(&other.join("e")), "effects", "--scenario-dir", s(&run_a), "--baseline-dir", s(&run_o)]);
    assert_eq!(o.status.code(), Some(1));

    let sw = dir.path().join("sweep");
    let o = slrmig(&[
        "--out", s(&sw), "sweep", "--zones", s(&zones), "--block-groups", s(&bgs), "--year", "2100",
    ]);
    assert!(o.status.success());
    assert_eq!(data_rows(&sw.join("sweep.csv")), 6);
}

/// Twelve zones on a jittered grid with flows from ext_radiation at beta 0.33.
fn synthetic_flows(dir: &Path) -> (PathBuf, PathBuf) {
    let zones: Vec<Zone64> = (0..12)
        .map(|k| {
            let (lat, lon) = (30.0 + (k / 4) as f64 + 0.37 * ((k * 7) % 5) as f64, -90.0 + (k % 4) as f64 * 1.3);
            let pop = 1000.0 * (1 + (k * 37) % 11) as f64;
            Zone64::new(format!("z{k}"), "", lat, lon, pop, k < 7).unwrap()
        })
        .collect();
    let graph = ZoneGraph64::new(zones.clone()).unwrap();
    let spec = ModelSpec64::ext_radiation(0.33).unwrap();
    let t = produce_flows(&zones, &graph, &spec, &ProductionFunction::standard(0.03).unwrap()).unwrap();
    let mut z = String::from("id,name,lat,lon,population,coastal\n");
    for zone in &zones {
        z.push_str(&format!("{},,{},{},{},{}\n", zone.id, zone.lat, zone.lon, zone.population, zone.coastal as u8));
    }
    let mut f = String::from("year,origin_id,dest_id,migrants\n");
    for year in [2005, 2006] {
        for (i, j, v) in t.entries() {
            f.push_str(&format!("{year},{},{},{v}\n", t.origins().id(i), t.dests().id(j)));
        }
    }
    (write(dir, "zones.csv", &z), write(dir, "flows.csv", &f))
}

#[test]
fn calibrate_and_crossval() {
    let dir = tempfile::tempdir().unwrap();
    let (zones, flows) = synthetic_flows(dir.path());
    let out = dir.path().join("cal");
    let o = slrmig(&["--out", s(&out), "calibrate", "--zones", s(&zones), "--flows", s(&flows), "--kind", "ext_radiation"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let beta: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("beta: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((beta - 0.33).abs() < 0.02, "{text}");
    let alpha: f64 = text.lines().find_map(|l| l.strip_prefix("alpha: ")).unwrap().parse().unwrap();
    assert!((alpha - 0.03).abs() < 1e-6);

    let o = slrmig(&["--out", s(&out), "calibrate", "--zones", s(&zones), "--flows", s(&flows), "--kind", "radiation"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("beta: n/a"));

    let cv = dir.path().join("cv");
    let o = slrmig(&[
        "--out",
        s(&cv),
        "crossval",
        "--zones",
        s(&zones),
        "--flows",
        s(&flows),
        "--kind",
        "ext_radiation",
        "--mode",
        "loo",
        "--origins",
        "z0,z1,z2,z3,z4,z5,z6",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(cv.join("cv_report.json")).unwrap()).unwrap();
    assert_eq!(report["n_folds"], 7);
    assert_eq!(report["schema"], "slrmig.cv/1");
    assert!(report["metrics"]["cpc"]["mean"].as_f64().unwrap() > 0.95);

    let o = slrmig(&[
        "--out", s(&cv), "crossval", "--zones", s(&zones), "--flows", s(&flows), "--kind", "ext_radiation", "--folds", "50",
    ]);
    assert_eq!(o.status.code(), Some(1));
}
