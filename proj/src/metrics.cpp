#include "peftlab/metrics.hpp"

#include <cstdio>

#include "peftlab/errors.hpp"

namespace peftlab {

Tensor binarize_logits(const Tensor& logits) {
    std::vector<double> out(logits.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits.values()[i] > 0.0 ? 1.0 : 0.0;
    return Tensor::from_data(logits.shape(), std::move(out));
}

MetricReport metrics(const Tensor& pred_mask, const Tensor& target_mask) {
    if (pred_mask.shape() != target_mask.shape()) {
        throw ShapeError("metrics: pred " + shape_str(pred_mask.shape()) + " vs target " +
                         shape_str(target_mask.shape()));
    }
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    const auto& p = pred_mask.values();
    const auto& t = target_mask.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] != 0.0 && p[i] != 1.0) throw ValidationError("metrics: pred mask not binary");
        if (t[i] != 0.0 && t[i] != 1.0) throw ValidationError("metrics: target mask not binary");
        const bool pi = p[i] == 1.0, ti = t[i] == 1.0;
        if (pi && ti) ++tp;
        else if (pi) ++fp;
        else if (ti) ++fn;
        else ++tn;
    }
    MetricReport r;
    const std::int64_t dice_den = 2 * tp + fp + fn;
    r.dsc = dice_den == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(dice_den);
    const std::int64_t fg_union = tp + fp + fn;
    const double fg_iou =
        fg_union == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(fg_union);
    const std::int64_t bg_union = tn + fp + fn;
    const double bg_iou =
        bg_union == 0 ? 1.0 : static_cast<double>(tn) / static_cast<double>(bg_union);
    r.miou = 0.5 * (fg_iou + bg_iou);
    r.f1 = r.dsc;  // identical on binary masks: 2PR/(P+R) reduces to 2TP/(2TP+FP+FN)
    return r;
}

MetricReport mean_report(const std::vector<MetricReport>& rows) {
    MetricReport m;
    if (rows.empty()) return m;
    for (const auto& r : rows) {
        m.dsc += r.dsc;
        m.miou += r.miou;
        m.f1 += r.f1;
    }
    const double n = static_cast<double>(rows.size());
    m.dsc /= n;
    m.miou /= n;
    m.f1 /= n;
    return m;
}

std::string metric_csv_header() {
    return "run_id,strategy,scenario,dsc,miou,f1,trainable_params,steps,seed";
}

std::string metric_csv_row(const std::string& run_id, const std::string& strategy,
                           const std::string& scenario, const MetricReport& m,
                           std::int64_t trainable_params, int steps, std::uint64_t seed) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%lld,%d,%llu", m.dsc, m.miou, m.f1,
                  static_cast<long long>(trainable_params), steps,
                  static_cast<unsigned long long>(seed));
    return run_id + "," + strategy + "," + scenario + "," + buf;
}

}  // namespace peftlab
