//! Invocation-count traces.
//!
//! Input files are CSV with a header row: one application-id column (by
//! default `HashApp`), any number of other columns that are ignored, and
//! minute-bin columns named `1`, `2`, …, `N`. Rows of the same application
//! (its functions) are summed bin by bin. Several day files are concatenated
//! bin-wise in the order given; an application missing from a file
//! contributes zeros for that file's bins.
//!
//! A bin with at least one invocation becomes a single arrival at the bin
//! index, in minutes.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::arrival::ArrivalSequence;
use crate::error::{Error, Result};

pub const DEFAULT_APP_COLUMN: &str = "HashApp";
pub const DEFAULT_MAX_ARRIVALS: usize = 180;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppSeries {
    pub app_id: String,
    /// One count per minute bin; `counts[0]` is bin 1.
    pub counts: Vec<u64>,
}

impl AppSeries {
    pub fn arrival_count(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Parses one trace file, aggregating rows per application in order of first appearance.
pub fn parse_trace(path: impl AsRef<Path>, app_column: &str) -> Result<Vec<AppSeries>> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let file = fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers().map_err(csv_err)?.clone();

    let app_idx = headers
        .iter()
        .position(|h| h == app_column)
        .ok_or_else(|| Error::MissingColumn { path: path.to_path_buf(), column: app_column.to_string() })?;
    let mut bins: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(col, h)| h.trim().parse::<usize>().ok().filter(|&b| b >= 1).map(|b| (b, col)))
        .collect();
    bins.sort_unstable();
    if bins.iter().enumerate().any(|(k, &(b, _))| b != k + 1) {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            reason: "minute columns must be numbered contiguously from 1".into(),
        });
    }
    let n_bins = bins.len();

    let mut order: Vec<AppSeries> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::MalformedRow { path: path.to_path_buf(), line, reason: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let app = record.get(app_idx).unwrap_or_default().to_string();
        if app.is_empty() {
            return Err(Error::MalformedRow { path: path.to_path_buf(), line, reason: "empty application id".into() });
        }
        let slot = *index.entry(app.clone()).or_insert_with(|| {
            order.push(AppSeries { app_id: app, counts: vec![0; n_bins] });
            order.len() - 1
        });
        for (k, &(_, col)) in bins.iter().enumerate() {
            let raw = record.get(col).unwrap_or_default().trim();
            let count: u64 = raw.parse().map_err(|_| Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                reason: format!("bin {} has non-integer count `{raw}`", k + 1),
            })?;
            order[slot].counts[k] += count;
        }
    }
    Ok(order)
}

/// Parses several day files and concatenates each application's bins in file order.
pub fn parse_trace_files<P: AsRef<Path>>(paths: &[P], app_column: &str) -> Result<Vec<AppSeries>> {
    let days = paths.iter().map(|p| parse_trace(p, app_column)).collect::<Result<Vec<_>>>()?;
    let widths: Vec<usize> = days.iter().map(|d| d.first().map_or(0, |a| a.counts.len())).collect();
    let mut order: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for day in &days {
        for app in day {
            if seen.insert(app.app_id.clone()) {
                order.push(app.app_id.clone());
            }
        }
    }
    let lookups: Vec<HashMap<&str, &AppSeries>> =
        days.iter().map(|d| d.iter().map(|a| (a.app_id.as_str(), a)).collect()).collect();
    Ok(order
        .into_iter()
        .map(|app_id| {
            let mut counts = Vec::with_capacity(widths.iter().sum());
            for (lookup, &width) in lookups.iter().zip(&widths) {
                match lookup.get(app_id.as_str()) {
                    Some(a) => counts.extend_from_slice(&a.counts),
                    None => counts.extend(std::iter::repeat_n(0, width)),
                }
            }
            AppSeries { app_id, counts }
        })
        .collect())
}

/// One arrival per non-empty bin, at the bin index (minutes).
pub fn to_arrivals(series: &AppSeries) -> ArrivalSequence {
    let times = series.counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(k, _)| (k + 1) as f64).collect();
    ArrivalSequence::from_times(times).expect("bin indices are increasing")
}

/// Keeps applications with between 2 and `max_arrivals` arrivals that are on
/// the allow-list, if one is given.
pub fn filter_apps(apps: Vec<AppSeries>, max_arrivals: usize, allow_list: Option<&HashSet<String>>) -> Vec<AppSeries> {
    apps.into_iter()
        .filter(|a| {
            let n = a.arrival_count();
            (2..=max_arrivals).contains(&n) && allow_list.is_none_or(|set| set.contains(&a.app_id))
        })
        .collect()
}

/// Newline-delimited application ids; blank lines are skipped.
pub fn read_allow_list(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn series(id: &str, counts: &[u64]) -> AppSeries {
        AppSeries { app_id: id.into(), counts: counts.to_vec() }
    }

    #[test]
    fn functions_of_one_app_are_summed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d1.csv",
            "HashOwner,HashApp,HashFunction,Trigger,1,2,3\no,A,f1,http,1,0,2\no,A,f2,timer,0,0,1\n",
        );
        let apps = parse_trace(&p, DEFAULT_APP_COLUMN).unwrap();
        assert_eq!(apps, vec![series("A", &[1, 0, 3])]);
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d1.csv", "HashApp,1,2\n");
        assert!(parse_trace(&p, DEFAULT_APP_COLUMN).unwrap().is_empty());
    }

    #[test]
    fn three_app_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let p =
            write(&dir, "d1.csv", "HashApp,HashFunction,1,2,3,4\nA,f,0,3,0,1\nB,f,5,5,5,5\nC,f,0,0,0,0\nB,g,1,0,0,0\n");
        let apps = parse_trace(&p, DEFAULT_APP_COLUMN).unwrap();
        assert_eq!(apps, vec![series("A", &[0, 3, 0, 1]), series("B", &[6, 5, 5, 5]), series("C", &[0, 0, 0, 0])]);
    }

    #[test]
    fn missing_app_column_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d1.csv", "App,1\nA,1\n");
        let err = parse_trace(&p, DEFAULT_APP_COLUMN).unwrap_err();
        assert!(err.to_string().contains("HashApp"), "{err}");
    }

    #[test]
    fn malformed_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d1.csv", "HashApp,1,2\nA,1,0\nB,x,1\n");
        let err = parse_trace(&p, DEFAULT_APP_COLUMN).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 3, .. }), "{err}");
        let p = write(&dir, "d2.csv", "HashApp,1,2\nA,1\n");
        assert!(matches!(parse_trace(&p, DEFAULT_APP_COLUMN).unwrap_err(), Error::MalformedRow { line: 2, .. }));
    }

    #[test]
    fn custom_app_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d1.csv", "app,1,2\nZ,0,1\n");
        assert_eq!(parse_trace(&p, "app").unwrap(), vec![series("Z", &[0, 1])]);
    }

    #[test]
    fn days_concatenate_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let d1 = write(&dir, "d1.csv", "HashApp,1,2\nA,1,0\n");
        let d2 = write(&dir, "d2.csv", "HashApp,1,2\nB,0,1\nA,0,2\n");
        let apps = parse_trace_files(&[d1, d2], DEFAULT_APP_COLUMN).unwrap();
        assert_eq!(apps, vec![series("A", &[1, 0, 0, 2]), series("B", &[0, 0, 0, 1])]);
        assert_eq!(to_arrivals(&apps[0]).times(), &[1.0, 4.0]);
    }

    #[test]
    fn bins_collapse_to_single_arrivals() {
        let a = to_arrivals(&series("A", &[0, 3, 0, 1]));
        assert_eq!(a.times(), &[2.0, 4.0]);
        assert_eq!(a.gaps(), vec![2.0]);
        assert!(to_arrivals(&series("Z", &[0, 0, 0])).is_empty());
        let mut counts = vec![0u64; 400];
        for k in 0..180 {
            counts[2 * k] = 1 + k as u64 % 3;
        }
        assert_eq!(to_arrivals(&series("F", &counts)).len(), 180);
    }

    #[test]
    fn filter_rules() {
        let many = |n: usize| {
            let mut c = vec![0u64; 2 * n];
            for k in 0..n {
                c[2 * k] = 1;
            }
            c
        };
        let apps = vec![series("big", &many(181)), series("one", &many(1)), series("ok", &many(180))];
        let kept = filter_apps(apps, 180, None);
        assert_eq!(kept.iter().map(|a| a.app_id.as_str()).collect::<Vec<_>>(), vec!["ok"]);

        let apps = vec![series("A", &[1, 1]), series("B", &[1, 1])];
        let allow: HashSet<String> = ["A".to_string()].into();
        let kept = filter_apps(apps, 180, Some(&allow));
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].app_id, "A");
    }

    #[test]
    fn allow_list_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "allow.txt", "A\n\n B \n");
        let set = read_allow_list(&p).unwrap();
        assert_eq!(set, ["A".to_string(), "B".to_string()].into());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn rebin(a: &ArrivalSequence, width: usize) -> AppSeries {
            let mut counts = vec![0; width];
            for &t in a.times() {
                counts[t as usize - 1] = 1;
            }
            AppSeries { app_id: "x".into(), counts }
        }

        proptest! {
            #[test]
            fn rebinning_is_idempotent(counts in proptest::collection::vec(0u64..4, 1..300)) {
                let s = AppSeries { app_id: "x".into(), counts: counts.clone() };
                let a = to_arrivals(&s);
                prop_assert_eq!(to_arrivals(&rebin(&a, counts.len())), a);
            }

            #[test]
            fn aggregation_ignores_row_order(
                rows in proptest::collection::vec((0usize..4, proptest::collection::vec(0u64..5, 3)), 1..12),
                seed in any::<u64>(),
            ) {
                use rand::seq::SliceRandom;
                let render = |rows: &[(usize, Vec<u64>)]| {
                    let mut s = String::from("HashApp,1,2,3\n");
                    for (app, c) in rows {
                        s.push_str(&format!("app{app},{},{},{}\n", c[0], c[1], c[2]));
                    }
                    s
                };
                let mut shuffled = rows.clone();
                shuffled.shuffle(&mut crate::rng::rng_from_seed(seed));
                let dir = tempfile::tempdir().unwrap();
                let p1 = write(&dir, "a.csv", &render(&rows));
                let p2 = write(&dir, "b.csv", &render(&shuffled));
                let mut a = parse_trace(&p1, DEFAULT_APP_COLUMN).unwrap();
                let mut b = parse_trace(&p2, DEFAULT_APP_COLUMN).unwrap();
                a.sort_by(|x, y| x.app_id.cmp(&y.app_id));
                b.sort_by(|x, y| x.app_id.cmp(&y.app_id));
                prop_assert_eq!(a, b);
            }
        }
    }
}
