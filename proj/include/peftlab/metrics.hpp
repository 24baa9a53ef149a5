#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "peftlab/tensor.hpp"

namespace peftlab {

struct MetricReport {
    double dsc = 0.0;
    double miou = 0.0;
    double f1 = 0.0;
};

// Threshold sigmoid(z) at 0.5, i.e. z > 0.
Tensor binarize_logits(const Tensor& logits);

// Binary-mask metrics. DSC = 2TP/(2TP+FP+FN); mIoU averages foreground and
// background IoU; F1 equals DSC on binary masks by identity and is reported
// through the same expression. Empty-vs-empty scores perfect.
MetricReport metrics(const Tensor& pred_mask, const Tensor& target_mask);

MetricReport mean_report(const std::vector<MetricReport>& rows);

// CSV row schema shared by all run reports.
std::string metric_csv_header();
std::string metric_csv_row(const std::string& run_id, const std::string& strategy,
                           const std::string& scenario, const MetricReport& m,
                           std::int64_t trainable_params, int steps, std::uint64_t seed);

}  // namespace peftlab
