//! Attention entropy and distance-rank profiles, representational
//! similarity between models, and paired comparison statistics.
//!
//! All measurements are computed in `f64` whatever the model precision.

mod attention;
mod plot;
mod rsa;
mod stats;

pub use attention::{
    attention_entropy, attention_rank_bias, midranks, normalized_entropy, normalized_ranks,
    EntropyProfile, RankProfile, ROW_TOL,
};
pub use plot::{line_plot, Series};
pub use rsa::{build_rdm, reorder_hidden, rsa, rsa_by_layer, spearman, Rdm};
pub use stats::{
    cohens_d, compare, ln_gamma, paired_t, pearson, pearson_r, reg_inc_beta, student_t_two_sided,
    ComparisonStats, Correlation, TTest,
};

/// CSV with one row per `(layer, pair)`.
pub fn rsa_csv(rows: &[(usize, String, f64)]) -> String {
    let mut out = String::from("layer,pair,rho\n");
    for (l, pair, rho) in rows {
        out.push_str(&format!("{l},{pair},{rho}\n"));
    }
    out
}

/// CSV with one row per named model pair.
pub fn stats_csv(rows: &[(String, ComparisonStats)]) -> String {
    let mut out = String::from("pair,pearson_r,p_r,t,p_t,d\n");
    for (pair, s) in rows {
        out.push_str(&format!(
            "{pair},{},{},{},{},{}\n",
            s.pearson_r, s.p_value_pearson, s.t_stat, s.p_value_t, s.cohens_d
        ));
    }
    out
}
