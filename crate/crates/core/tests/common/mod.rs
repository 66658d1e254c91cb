#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ethno_core::rng::SampleRng;

pub const LABELS: [&str; 4] = ["White", "Black", "Hispanic", "Asian"];
const SURNAMES: [[&str; 3]; 4] = [
    ["Miller", "Smith", "Walsh"],
    ["Washington", "Jefferson", "Banks"],
    ["Lopez", "Garcia", "Rodriguez"],
    ["Nguyen", "Kim", "Patel"],
];
const COUNTIES: [&str; 3] = ["Miami-Dade County", "Orange County", "Alachua County"];

pub struct Fixture {
    pub dir: PathBuf,
    pub records: PathBuf,
    pub map: PathBuf,
    pub scheme: PathBuf,
    pub surnames: PathBuf,
    pub geo: PathBuf,
    pub census: PathBuf,
}

pub fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

/// Synthetic voter file: `per_label` records of each label with a surname
/// drawn from that label's list, a county, age, party and income.
pub fn write_fixture(dir: &Path, per_label: usize, seed: u64) -> Fixture {
    let mut rng = SampleRng::new(seed);
    let mut csv = String::from("voter_id,first_name,last_name,county,state,age,party,income,race\n");
    let mut id = 0;
    for (l, label) in LABELS.iter().enumerate() {
        for _ in 0..per_label {
            id += 1;
            let surname = SURNAMES[l][rng.below(3) as usize];
            let county = COUNTIES[rng.below(3) as usize];
            let age = 18 + rng.below(70);
            let party = ["DEM", "REP", "NPA"][rng.below(3) as usize];
            let income = 20_000.0 + 100_000.0 * rng.unit_f64();
            writeln!(
                csv,
                "V{id:05},Alex,{surname},{county},Florida,{age},{party},{income:.0},{label}"
            )
            .unwrap();
        }
    }
    let records = dir.join("voters.csv");
    std::fs::write(&records, csv).unwrap();

    let map = dir.join("voters.map.json");
    std::fs::write(
        &map,
        r#"{"id": "voter_id", "given_names": "first_name", "surname": "last_name",
            "geography": {"county": "county", "state": "state"},
            "age": "age", "party": "party", "income": "income", "truth": "race"}"#,
    )
    .unwrap();

    let scheme = dir.join("us4.json");
    std::fs::write(
        &scheme,
        r#"{"name": "us4", "labels": ["White", "Black", "Hispanic", "Asian"],
            "aliases": {"Latino": "Hispanic", "Caucasian": "White"}}"#,
    )
    .unwrap();

    let mut s = String::from("surname,White,Black,Hispanic,Asian\n");
    for (l, names) in SURNAMES.iter().enumerate() {
        for name in names {
            let mut p = [0.1; 4];
            p[l] = 0.7;
            writeln!(s, "{},{},{},{},{}", name.to_uppercase(), p[0], p[1], p[2], p[3]).unwrap();
        }
    }
    let surnames = dir.join("surnames.csv");
    std::fs::write(&surnames, s).unwrap();

    let geo = dir.join("counties.csv");
    std::fs::write(
        &geo,
        "county,White,Black,Hispanic,Asian\n\
         Miami-Dade County,300,200,900,50\n\
         Orange County,500,250,300,80\n\
         Alachua County,400,150,100,60\n",
    )
    .unwrap();

    let census = dir.join("census.json");
    std::fs::write(&census, r#"{"White": 53.0, "Black": 16.0, "Hispanic": 26.0, "Asian": 5.0}"#).unwrap();

    Fixture {
        dir: dir.to_path_buf(),
        records,
        map,
        scheme,
        surnames,
        geo,
        census,
    }
}

pub fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["ethno"];
    argv.extend_from_slice(args);
    ethno_core::cli::dispatch(argv)
}
