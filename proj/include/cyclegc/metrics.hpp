#pragma once

#include <string>
#include <vector>

#include "cyclegc/image.hpp"

namespace cyclegc {

/// Horizontal/vertical image gradients: central differences in the interior,
/// one-sided at borders. When a mask is present the stencil is restricted to
/// valid neighbors, so a rectangular mask behaves exactly like a crop.
void gradient_x(const ImageGrid& g, std::vector<double>& out);
void gradient_y(const ImageGrid& g, std::vector<double>& out);

/// Maskless raw-array forms shared with the differentiable loss path, plus
/// their adjoints (out_acc += G^T * gin). The stencils match gradient_x/y
/// on unmasked grids exactly.
void gradient_x_raw(const double* src, int h, int w, double* out);
void gradient_y_raw(const double* src, int h, int w, double* out);
void gradient_x_adjoint(const double* gin, int h, int w, double* out_acc);
void gradient_y_adjoint(const double* gin, int h, int w, double* out_acc);

/// Normalized cross correlation over the joint valid mask. Returns 0 when
/// either image is constant over the mask. Throws std::invalid_argument on
/// dimension mismatch or an empty joint mask.
double ncc(const ImageGrid& a, const ImageGrid& b);

/// GC(A,B) = (NCC(dA/dx, dB/dx) + NCC(dA/dy, dB/dy)) / 2.
double gradient_correlation(const ImageGrid& a, const ImageGrid& b);

/// Mean absolute intensity difference over the joint mask.
double mae(const ImageGrid& a, const ImageGrid& b);

/// 20*log10(255/sqrt(MSE)) over the joint mask; +infinity for identical
/// images (zero MSE).
double psnr(const ImageGrid& a, const ImageGrid& b);

/// Mutual information in nats from a bins x bins joint histogram with
/// equal-width bins over [0, 255].
double mutual_information(const ImageGrid& a, const ImageGrid& b, int bins = 64);

/// Dice overlap for one class; 1.0 when the class is absent from both grids.
double dice(const LabelGrid& p, const LabelGrid& g, int class_id);

// ---- Reporting ------------------------------------------------------------

struct MetricItem {
    std::string item_id;
    std::string metric;
    double value = 0.0;
};

struct MetricAggregate {
    std::string metric;
    double mean = 0.0;
    double sd = 0.0;  // sample SD (n-1); 0 for n < 2
    int n = 0;
};

struct MetricReportConfig {
    int mi_bins = 64;
    std::string gradient_operator = "central-interior/one-sided-border";
    std::string mask_policy = "joint-valid";
};

/// Per-item metric values plus aggregates; serializes to CSV rows and a JSON
/// aggregate block.
struct MetricReport {
    std::vector<MetricItem> per_item;
    MetricReportConfig config;

    void add(const std::string& item_id, const std::string& metric, double value);
    std::vector<MetricAggregate> aggregates() const;
    std::vector<double> values_for(const std::string& metric) const;

    std::string to_csv() const;
    std::string aggregate_json() const;
    void write_csv(const std::string& path) const;
    void write_aggregate_json(const std::string& path) const;
};

double mean_of(const std::vector<double>& v);
double sample_sd(const std::vector<double>& v);

}  // namespace cyclegc
