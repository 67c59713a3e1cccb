use crate::geom::{PointCloud, SpatialIndex};

/// Statistical outlier removal: drops points whose mean distance to their
/// `k` nearest neighbours exceeds mean + std_mult * std of that statistic
/// over the whole cloud. Clouds with at most `k` points pass through
/// unchanged since the statistic is undefined there.
pub fn sor_filter(cloud: &PointCloud, k: usize, std_mult: f64) -> PointCloud {
    assert!(k >= 1, "sor_filter needs k >= 1");
    assert!(std_mult > 0.0, "sor_filter needs std_mult > 0");
    if cloud.len() <= k {
        return cloud.clone();
    }
    let index = SpatialIndex::from_points(&cloud.points);
    let mean_dists: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| {
            // k+1 because the query point itself sits in the index at
            // distance zero.
            let nn = index.knn(p, k + 1);
            let sum: f64 = nn.iter().skip(1).map(|(_, d)| d).sum();
            sum / k as f64
        })
        .collect();
    let n = mean_dists.len() as f64;
    let mu = mean_dists.iter().sum::<f64>() / n;
    let var = mean_dists.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n;
    let cutoff = mu + std_mult * var.sqrt();
    let keep: Vec<bool> = mean_dists.iter().map(|&d| d <= cutoff).collect();
    let points: Vec<_> = cloud
        .points
        .iter()
        .zip(&keep)
        .filter_map(|(p, &k)| k.then_some(*p))
        .collect();
    let covariances = cloud.covariances.as_ref().map(|covs| {
        covs.iter()
            .zip(&keep)
            .filter_map(|(c, &k)| k.then_some(*c))
            .collect()
    });
    PointCloud { points, frame: cloud.frame, covariances }
}
