use std::io::Write;

use rdlasso::io::{load_csv, ColumnMap, EstimateReport, OutputFormat};
use rdlasso::simulation::{DgpConfig, Dgp};
use rdlasso::{estimate_sharp, PipelineConfig};

fn write_sample(p: usize, seed: u64) -> tempfile::NamedTempFile {
    let data = Dgp::new(DgpConfig { n: 600, p, ..Default::default() }).unwrap().generate(seed).data;
    let mut file = tempfile::NamedTempFile::new().unwrap();
    let mut header = vec!["y".to_string(), "x".to_string()];
    header.extend((0..p).map(|k| format!("z{k}")));
    writeln!(file, "{}", header.join(",")).unwrap();
    for i in 0..data.n() {
        let mut row = vec![format!("{:e}", data.y()[i]), format!("{}", data.x()[i] + 36.0)];
        row.extend((0..p).map(|k| data.z()[(i, k)].to_string()));
        writeln!(file, "{}", row.join(",")).unwrap();
    }
    file
}

#[test]
fn csv_report_round_trips_exactly() {
    let file = write_sample(12, 3);
    let loaded = load_csv(file.path(), &ColumnMap::default(), 36.0).unwrap();
    assert_eq!(loaded.data.p(), 12);
    let est = estimate_sharp(&loaded.data, &PipelineConfig::default()).unwrap();
    let report = EstimateReport::new(&est, &loaded, 17);
    let text = report.render(OutputFormat::Csv).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let record = rdr.records().next().unwrap().unwrap();
    let field = |name: &str| record.get(headers.iter().position(|h| h == name).unwrap()).unwrap().to_string();
    for (name, value) in [("tau_hat", est.tau_hat), ("se", est.se), ("ci_lower", est.ci_lower), ("h", est.h), ("b", est.b)] {
        let parsed: f64 = field(name).parse().unwrap();
        assert_eq!(parsed.to_bits(), value.to_bits(), "{name}");
        // 17 significant digits are enough to reproduce the value.
        let again: f64 = format!("{value:.16e}").parse().unwrap();
        assert_eq!(again.to_bits(), value.to_bits());
    }
    assert_eq!(field("seed"), "17");
    assert_eq!(field("n_selected"), est.selected.len().to_string());
}

#[test]
fn json_report_round_trips_exactly() {
    let file = write_sample(5, 4);
    let loaded = load_csv(file.path(), &ColumnMap::default(), 36.0).unwrap();
    let est = estimate_sharp(&loaded.data, &PipelineConfig::default()).unwrap();
    let report = EstimateReport::new(&est, &loaded, 1);
    let json = report.render(OutputFormat::Json).unwrap();
    let back: EstimateReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}

#[test]
fn file_without_covariates_runs_baseline() {
    let file = write_sample(0, 5);
    let loaded = load_csv(file.path(), &ColumnMap::default(), 36.0).unwrap();
    assert_eq!(loaded.data.p(), 0);
    let est = estimate_sharp(&loaded.data, &PipelineConfig::default()).unwrap();
    assert!(est.selected.is_empty());
    assert!(est.lambda.is_none());
}
