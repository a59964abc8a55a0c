//! CSV and JSON readers/writers for zones, block groups, flows, matrices and reports.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use csv::{ReaderBuilder, StringRecord};

use crate::effects::EffectsReport;
use crate::error::{Error, Result};
use crate::matrix::{MigrationMatrix, Registry};
use crate::scalar::Scalar;
use crate::slrsplit::{affected_id, unaffected_id, BlockGroup, FloodScenario, SplitZones, MAX_DEPTH_FT};
use crate::zonegraph::{Zone, ZoneGraph};

/// Values below this are left out of triplet files.
pub const TRIPLET_EPSILON: f64 = 1e-6;

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

struct Table {
    path: String,
    header: Vec<String>,
    rows: Vec<(u64, StringRecord)>,
}

impl Table {
    fn open(path: &Path) -> Result<Self> {
        let p = path_str(path);
        let csv_err = |source| Error::Csv { path: p.clone(), source };
        let mut rdr = ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
        let header = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |pos| pos.line());
            rows.push((line, rec));
        }
        Ok(Table { path: p, header, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::input(&self.path, 1, format!("missing column `{name}`")))
    }

    fn warn_extra(&self, known: impl Fn(&str) -> bool) {
        for h in self.header.iter().filter(|h| !known(h)) {
            log::warn!("{}: ignoring unknown column `{h}`", self.path);
        }
    }

    fn text<'r>(&self, line: u64, rec: &'r StringRecord, col: usize) -> Result<&'r str> {
        rec.get(col).ok_or_else(|| Error::input(&self.path, line, "row is too short"))
    }

    fn num<S: Scalar>(&self, line: u64, rec: &StringRecord, col: usize) -> Result<S> {
        let raw = self.text(line, rec, col)?;
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(S::lit)
            .ok_or_else(|| Error::input(&self.path, line, format!("`{}`: not a finite number: `{raw}`", self.header[col])))
    }
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw {
        "1" | "true" | "TRUE" | "True" => Some(true),
        "0" | "false" | "FALSE" | "False" => Some(false),
        _ => None,
    }
}

/// Reads `id,name,lat,lon,population,coastal`.
pub fn read_zones<S: Scalar>(path: &Path) -> Result<Vec<Zone<S>>> {
    const COLS: [&str; 6] = ["id", "name", "lat", "lon", "population", "coastal"];
    let t = Table::open(path)?;
    t.warn_extra(|h| COLS.contains(&h));
    let c: Vec<usize> = COLS.iter().map(|n| t.col(n)).collect::<Result<_>>()?;
    let mut zones = Vec::with_capacity(t.rows.len());
    let mut seen = HashMap::new();
    for (line, rec) in &t.rows {
        let line = *line;
        let id = t.text(line, rec, c[0])?.to_string();
        if id.is_empty() {
            return Err(Error::input(&t.path, line, "empty zone id"));
        }
        if let Some(first) = seen.insert(id.clone(), line) {
            return Err(Error::input(&t.path, line, format!("duplicate zone id `{id}` (first on line {first})")));
        }
        let coastal_raw = t.text(line, rec, c[5])?;
        let coastal = parse_bool(coastal_raw)
            .ok_or_else(|| Error::input(&t.path, line, format!("coastal must be 0 or 1, got `{coastal_raw}`")))?;
        let zone = Zone::new(
            id,
            t.text(line, rec, c[1])?,
            t.num(line, rec, c[2])?,
            t.num(line, rec, c[3])?,
            t.num(line, rec, c[4])?,
            coastal,
        )
        .map_err(|e| Error::input(&t.path, line, e.to_string()))?;
        if zone.population == S::zero() {
            log::warn!("{}:{line}: zone {} has zero population", t.path, zone.id);
        }
        zones.push(zone);
    }
    Ok(zones)
}

pub fn read_zone_graph<S: Scalar>(path: &Path) -> Result<ZoneGraph<S>> {
    ZoneGraph::new(read_zones(path)?)
}

/// Reads `bg_id,county_id,hu_<year>...,ppu,gq,af_1ft..af_6ft[,area_km2_1ft..area_km2_6ft]`.
pub fn read_block_groups<S: Scalar>(path: &Path) -> Result<Vec<BlockGroup<S>>> {
    let t = Table::open(path)?;
    let id = t.col("bg_id")?;
    let county = t.col("county_id")?;
    let ppu = t.col("ppu")?;
    let gq = t.col("gq")?;
    let af: Vec<usize> = (1..=MAX_DEPTH_FT).map(|d| t.col(&format!("af_{d}ft"))).collect::<Result<_>>()?;
    let area_names: Vec<String> = (1..=MAX_DEPTH_FT).map(|d| format!("area_km2_{d}ft")).collect();
    let area: Vec<Option<usize>> = area_names.iter().map(|n| t.col(n).ok()).collect();
    let area = match area.iter().filter(|a| a.is_some()).count() {
        0 => None,
        n if n == area.len() => Some(area.into_iter().flatten().collect::<Vec<_>>()),
        _ => return Err(Error::input(&t.path, 1, "area_km2 columns must cover all of 1..6 ft or none")),
    };
    let mut hu: Vec<(i32, usize)> = Vec::new();
    for (k, h) in t.header.iter().enumerate() {
        if let Some(y) = h.strip_prefix("hu_") {
            let y = y
                .parse()
                .map_err(|_| Error::input(&t.path, 1, format!("bad housing-unit column `{h}`")))?;
            hu.push((y, k));
        }
    }
    t.warn_extra(|h| {
        ["bg_id", "county_id", "ppu", "gq"].contains(&h)
            || h.starts_with("hu_")
            || (h.starts_with("af_") && af.iter().any(|&k| t.header[k] == h))
            || (area.is_some() && area_names.iter().any(|n| n == h))
    });

    let mut out = Vec::with_capacity(t.rows.len());
    let mut seen = HashMap::new();
    for (line, rec) in &t.rows {
        let line = *line;
        let bg_id = t.text(line, rec, id)?.to_string();
        if let Some(first) = seen.insert(bg_id.clone(), line) {
            return Err(Error::input(&t.path, line, format!("duplicate block group `{bg_id}` (first on line {first})")));
        }
        let mut housing_units = BTreeMap::new();
        for &(y, k) in &hu {
            if !t.text(line, rec, k)?.is_empty() {
                housing_units.insert(y, t.num(line, rec, k)?);
            }
        }
        let mut fractions = [S::zero(); MAX_DEPTH_FT as usize];
        for (f, &k) in fractions.iter_mut().zip(&af) {
            *f = t.num(line, rec, k)?;
        }
        let flooded_area_km2 = match &area {
            Some(cols) => {
                let mut a = [S::zero(); MAX_DEPTH_FT as usize];
                for (v, &k) in a.iter_mut().zip(cols) {
                    *v = t.num(line, rec, k)?;
                }
                Some(a)
            }
            None => None,
        };
        let bg = BlockGroup {
            id: bg_id,
            county_id: t.text(line, rec, county)?.to_string(),
            housing_units,
            persons_per_unit: t.num(line, rec, ppu)?,
            group_quarters: t.num(line, rec, gq)?,
            affected_fraction: fractions,
            flooded_area_km2,
        };
        bg.validate().map_err(|e| Error::input(&t.path, line, e.to_string()))?;
        if bg.housing_units.len() < 2 {
            return Err(Error::input(&t.path, line, "need at least 2 housing-unit history values"));
        }
        out.push(bg);
    }
    Ok(out)
}

/// Block groups whose county is not in `counties`, as `bg -> county`.
pub fn orphan_block_groups<S: Scalar>(bgs: &[BlockGroup<S>], counties: &ZoneGraph<S>) -> Vec<String> {
    bgs.iter()
        .filter(|bg| counties.index_of(&bg.county_id).is_none())
        .map(|bg| format!("{} -> {}", bg.id, bg.county_id))
        .collect()
}

/// Reads `year,origin_id,dest_id,migrants` into one matrix per year on the graph's ids.
pub fn read_flows<S: Scalar>(path: &Path, graph: &ZoneGraph<S>) -> Result<BTreeMap<i32, MigrationMatrix<S>>> {
    let t = Table::open(path)?;
    const COLS: [&str; 4] = ["year", "origin_id", "dest_id", "migrants"];
    t.warn_extra(|h| COLS.contains(&h));
    let c: Vec<usize> = COLS.iter().map(|n| t.col(n)).collect::<Result<_>>()?;
    let reg = Arc::new(Registry::new(graph.zones().iter().map(|z| z.id.clone()).collect())?);
    let mut by_year: BTreeMap<i32, Vec<(usize, usize, S)>> = BTreeMap::new();
    let mut offenders = Vec::new();
    for (line, rec) in &t.rows {
        let line = *line;
        let year_raw = t.text(line, rec, c[0])?;
        let year: i32 = year_raw
            .parse()
            .map_err(|_| Error::input(&t.path, line, format!("bad year `{year_raw}`")))?;
        let v: S = t.num(line, rec, c[3])?;
        if v < S::zero() {
            return Err(Error::input(&t.path, line, "negative migrant count"));
        }
        let o = t.text(line, rec, c[1])?;
        let d = t.text(line, rec, c[2])?;
        match (reg.index_of(o), reg.index_of(d)) {
            (Some(i), Some(j)) => by_year.entry(year).or_default().push((i, j, v)),
            (a, b) => {
                if a.is_none() {
                    offenders.push(format!("line {line}: origin {o}"));
                }
                if b.is_none() {
                    offenders.push(format!("line {line}: dest {d}"));
                }
            }
        }
    }
    if !offenders.is_empty() {
        return Err(Error::ReferentialIntegrity { offenders });
    }
    by_year
        .into_iter()
        .map(|(y, trip)| Ok((y, MigrationMatrix::from_triplets(reg.clone(), reg.clone(), trip)?)))
        .collect()
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Writes `origin_id,dest_id,migrants` in row order, skipping values below 1e-6.
pub fn write_triplets<S: Scalar>(path: &Path, t: &MigrationMatrix<S>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path_str(path),
        source,
    })?;
    let csv_err = |source| Error::Csv {
        path: path_str(path),
        source,
    };
    w.write_record(["origin_id", "dest_id", "migrants"]).map_err(csv_err)?;
    for (i, j, v) in t.entries() {
        let v = v.as_f64();
        if v < TRIPLET_EPSILON {
            continue;
        }
        w.write_record([t.origins().id(i), t.dests().id(j), &fmt_num(v)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_triplets<S: Scalar>(path: &Path, origins: Arc<Registry>, dests: Arc<Registry>) -> Result<MigrationMatrix<S>> {
    let t = Table::open(path)?;
    let c: Vec<usize> = ["origin_id", "dest_id", "migrants"]
        .iter()
        .map(|n| t.col(n))
        .collect::<Result<_>>()?;
    let mut trip = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let line = *line;
        let o = t.text(line, rec, c[0])?;
        let d = t.text(line, rec, c[1])?;
        let i = origins
            .index_of(o)
            .ok_or_else(|| Error::input(&t.path, line, format!("unknown origin `{o}`")))?;
        let j = dests
            .index_of(d)
            .ok_or_else(|| Error::input(&t.path, line, format!("unknown destination `{d}`")))?;
        trip.push((i, j, t.num(line, rec, c[2])?));
    }
    MigrationMatrix::from_triplets(origins, dests, trip)
}

const SPLIT_COLS: [&str; 10] = [
    "county_id",
    "name",
    "lat",
    "lon",
    "coastal",
    "projected",
    "affected_pop",
    "unaffected_pop",
    "depth_ft",
    "flooded_area_km2",
];

pub fn write_split<S: Scalar>(path: &Path, split: &SplitZones<S>) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path_str(path),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SPLIT_COLS).map_err(csv_err)?;
    for c in 0..split.len() {
        let z = &split.unaffected[c];
        let area = split
            .flooded_area_km2
            .as_ref()
            .map_or(String::new(), |a| fmt_num(a[c].as_f64()));
        w.write_record([
            split.county_ids[c].clone(),
            z.name.clone(),
            fmt_num(z.lat.as_f64()),
            fmt_num(z.lon.as_f64()),
            (z.coastal as u8).to_string(),
            fmt_num(split.projected[c].as_f64()),
            fmt_num(split.affected[c].population.as_f64()),
            fmt_num(z.population.as_f64()),
            split.depth_ft.to_string(),
            area,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_split<S: Scalar>(path: &Path) -> Result<SplitZones<S>> {
    let t = Table::open(path)?;
    let c: Vec<usize> = SPLIT_COLS.iter().map(|n| t.col(n)).collect::<Result<_>>()?;
    let mut out = SplitZones {
        county_ids: Vec::new(),
        projected: Vec::new(),
        affected: Vec::new(),
        unaffected: Vec::new(),
        flooded_area_km2: None,
        depth_ft: 0,
    };
    let mut areas = Vec::new();
    for (k, (line, rec)) in t.rows.iter().enumerate() {
        let line = *line;
        let id = t.text(line, rec, c[0])?.to_string();
        let name = t.text(line, rec, c[1])?.to_string();
        let (lat, lon) = (t.num(line, rec, c[2])?, t.num(line, rec, c[3])?);
        let coastal = parse_bool(t.text(line, rec, c[4])?).ok_or_else(|| Error::input(&t.path, line, "bad coastal flag"))?;
        let depth: u8 = t
            .text(line, rec, c[8])?
            .parse()
            .map_err(|_| Error::input(&t.path, line, "bad depth"))?;
        if k > 0 && depth != out.depth_ft {
            return Err(Error::input(&t.path, line, "depth differs between rows"));
        }
        out.depth_ft = depth;
        let area = t.text(line, rec, c[9])?;
        if !area.is_empty() {
            areas.push(t.num(line, rec, c[9])?);
        }
        out.projected.push(t.num(line, rec, c[5])?);
        out.affected.push(Zone {
            id: affected_id(&id),
            name: name.clone(),
            lat,
            lon,
            population: t.num(line, rec, c[6])?,
            coastal,
        });
        out.unaffected.push(Zone {
            id: unaffected_id(&id),
            name,
            lat,
            lon,
            population: t.num(line, rec, c[7])?,
            coastal,
        });
        out.county_ids.push(id);
    }
    if !areas.is_empty() {
        if areas.len() != out.len() {
            return Err(Error::input(&t.path, 1, "flooded_area_km2 must be given for every county or none"));
        }
        out.flooded_area_km2 = Some(areas);
    }
    Ok(out)
}

/// A preset name (`none`, `medium`, `high`) or a path to a scenario JSON file.
pub fn load_scenario(arg: &str) -> Result<FloodScenario> {
    if let Some(s) = FloodScenario::preset(arg) {
        return Ok(s);
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(Error::invalid(format!("`{arg}` is neither a scenario preset nor a file")));
    }
    FloodScenario::from_json(&std::fs::read_to_string(path)?)
}

pub fn write_effects_csv(path: &Path, report: &EffectsReport) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path_str(path),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = [
        "county_id",
        "pop",
        "affected_pop",
        "in_scenario",
        "in_baseline",
        "extra",
        "extra_flooded",
        "extra_unflooded",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(report.flag_column_names());
    w.write_record(&header).map_err(csv_err)?;
    for c in &report.counties {
        let mut rec = vec![
            c.county_id.clone(),
            fmt_num(c.pop),
            fmt_num(c.affected_pop),
            fmt_num(c.in_scenario),
            fmt_num(c.in_baseline),
            fmt_num(c.extra),
            fmt_num(c.extra_flooded),
            fmt_num(c.extra_unflooded),
        ];
        rec.extend(c.flags.iter().map(|&f| (f as u8).to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn zones_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "z.csv", "id,name,lat,lon,population,coastal,extra\na,A,1,2,100,1,x\nb,B,3,4,200,0,y\n");
        let z: Vec<Zone<f64>> = read_zones(&p).unwrap();
        assert_eq!(z.len(), 2);
        assert!(z[0].coastal && !z[1].coastal);

        let p = file(&dir, "bad.csv", "id,name,lat,lon,population,coastal\na,A,1,2,100,1\nb,B,95,4,200,0\n");
        match read_zones::<f64>(&p) {
            Err(Error::Input { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn block_group_rows() {
        let dir = tempfile::tempdir().unwrap();
        let head = "bg_id,county_id,hu_2000,hu_2010,ppu,gq,af_1ft,af_2ft,af_3ft,af_4ft,af_5ft,af_6ft\n";
        let p = file(&dir, "bg.csv", &format!("{head}b1,c1,100,120,2.5,3,0,0.1,0.2,0.3,0.4,0.5\n"));
        let bgs: Vec<BlockGroup<f64>> = read_block_groups(&p).unwrap();
        assert_eq!(bgs[0].housing_units.len(), 2);
        assert!(bgs[0].flooded_area_km2.is_none());

        let p = file(
            &dir,
            "bad.csv",
            &format!("{head}b1,c1,100,120,2.5,3,0,0.1,0.2,0.3,0.4,0.5\nb2,c1,100,120,2.5,3,0,0.3,0.2,0.3,0.4,0.5\n"),
        );
        match read_block_groups::<f64>(&p) {
            Err(Error::Input { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("decreases"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn triplets_and_split_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Arc::new(Registry::new(vec!["a".into(), "b".into()]).unwrap());
        let t = MigrationMatrix::from_triplets(reg.clone(), reg.clone(), vec![(0, 1, 0.1 + 0.2), (1, 0, 1e-9)]).unwrap();
        let p = dir.path().join("t.csv");
        write_triplets(&p, &t).unwrap();
        let back: MigrationMatrix<f64> = read_triplets(&p, reg.clone(), reg).unwrap();
        assert_eq!(back.get(0, 1), 0.1 + 0.2);
        assert_eq!(back.nnz(), 1);

        let g = ZoneGraph::new(vec![
            Zone::new("a", "A", 0.0, 0.0, 10.0, true).unwrap(),
            Zone::new("b", "B", 0.0, 1.0, 20.0, false).unwrap(),
        ])
        .unwrap();
        let split = crate::slrsplit::split_zones::<f64>(&g, &[], &FloodScenario::none(), 2020).unwrap();
        let p = dir.path().join("split.csv");
        write_split(&p, &split).unwrap();
        assert_eq!(read_split::<f64>(&p).unwrap(), split);
    }

    #[test]
    fn flows_reject_unknown_ids() {
        let dir = tempfile::tempdir().unwrap();
        let g = ZoneGraph::new(vec![
            Zone::new("a", "", 0.0, 0.0, 10.0, true).unwrap(),
            Zone::new("b", "", 0.0, 1.0, 20.0, false).unwrap(),
        ])
        .unwrap();
        let p = file(&dir, "f.csv", "year,origin_id,dest_id,migrants\n2001,a,b,5\n2001,a,b,2\n2002,b,a,1\n");
        let flows: BTreeMap<i32, MigrationMatrix<f64>> = read_flows(&p, &g).unwrap();
        assert_eq!(flows[&2001].get(0, 1), 7.0);
        let p = file(&dir, "g.csv", "year,origin_id,dest_id,migrants\n2001,a,zz,5\n");
        assert!(matches!(read_flows::<f64>(&p, &g), Err(Error::ReferentialIntegrity { .. })));
    }

    #[test]
    fn scenario_loading() {
        assert_eq!(load_scenario("high").unwrap(), FloodScenario::high());
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "s.json", r#"{"name": "x", "schedule": {"2055": 3}}"#);
        let s = load_scenario(p.to_str().unwrap()).unwrap();
        assert_eq!(s.schedule[&2055], 3);
        assert!(load_scenario("nope").is_err());
    }
}
