//! Confusion counts and the detection metrics computed from them. The
//! positive class is botnet (label 1). Accuracy is intentionally absent: the
//! classes are heavily imbalanced.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<Confusion> {
    if preds.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p == 1, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Detection rate, TP / (TP + FN).
    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// TP / (TP + FP).
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// 2·R·P / (R + P).
    pub fn f1(&self) -> Option<f64> {
        let (r, p) = (self.recall()?, self.precision()?);
        (r + p > 0.0).then(|| 2.0 * r * p / (r + p))
    }

    /// False alarm rate, FP / (FP + TN).
    pub fn far(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }
}

impl Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for Confusion {
    fn add_assign(&mut self, o: Confusion) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Confusion {
    fn sum<I: Iterator<Item = Confusion>>(iter: I) -> Confusion {
        iter.fold(Confusion::default(), Add::add)
    }
}

/// Printed in place of a metric whose denominator is zero.
pub const UNDEFINED: &str = "undefined";

pub fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:.6}"))
}

pub const CSV_HEADER: &str = "split,graphs,tp,fp,tn,fn,recall,precision,f1,far";

/// One `split,graphs,tp,fp,tn,fn,recall,precision,f1,far` row.
pub fn csv_row(split: &str, graphs: usize, c: &Confusion) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{split},{graphs},{},{},{},{},{},{},{},{}",
        c.tp,
        c.fp,
        c.tn,
        c.fn_,
        fmt_metric(c.recall()),
        fmt_metric(c.precision()),
        fmt_metric(c.f1()),
        fmt_metric(c.far())
    );
    s
}
