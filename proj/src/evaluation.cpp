#include "mscff/evaluation.hpp"

#include <cstdio>
#include <json.hpp>

#include "mscff/errors.hpp"

namespace mscff {

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

bool is_positive(std::uint8_t label, MaskClass c) {
    return c == MaskClass::Cloud ? label == kLabelCloud : label == kLabelShadow;
}

void check_shapes(const MaskRaster& a, const MaskRaster& b, std::span<const std::uint8_t> extra, const char* what) {
    if (a.h != b.h || a.w != b.w)
        throw ShapeError(std::string(what) + ": mask sizes differ (" + std::to_string(a.h) + "x" + std::to_string(a.w) +
                         " vs " + std::to_string(b.h) + "x" + std::to_string(b.w) + ")");
    if (!extra.empty() && extra.size() != a.labels.size())
        throw ShapeError(std::string(what) + ": auxiliary plane has " + std::to_string(extra.size()) +
                         " pixels, masks have " + std::to_string(a.labels.size()));
}

nlohmann::json metric_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json class_json(const ClassMetrics& m) {
    return {{"oa", metric_json(m.oa)},       {"recall", metric_json(m.recall)}, {"precision", metric_json(m.precision)},
            {"iou", metric_json(m.iou)},     {"miou", metric_json(m.miou)},     {"f1", metric_json(m.f1)},
            {"tp", m.counts.tp},             {"tn", m.counts.tn},               {"fp", m.counts.fp},
            {"fn", m.counts.fn}};
}

void class_lines(std::string& out, const std::string& scope, const std::string& cls, const ClassMetrics& m) {
    const std::pair<const char*, const std::optional<double>*> rows[] = {
        {"oa", &m.oa}, {"recall", &m.recall}, {"precision", &m.precision},
        {"iou", &m.iou}, {"miou", &m.miou}, {"f1", &m.f1}};
    for (const auto& [name, value] : rows) out += scope + "\t" + cls + "\t" + name + "\t" + format_metric(*value) + "\n";
}

}  // namespace

std::string to_string(MaskClass c) { return c == MaskClass::Cloud ? "cloud" : "shadow"; }

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
}

ConfusionCounts confusion(const MaskRaster& pred, const MaskRaster& ref, MaskClass positive,
                          std::span<const std::uint8_t> valid) {
    check_shapes(pred, ref, valid, "confusion");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        if (!valid.empty() && valid[i] == 0) continue;
        const bool p = is_positive(pred.labels[i], positive);
        const bool r = is_positive(ref.labels[i], positive);
        if (p && r)
            ++c.tp;
        else if (p)
            ++c.fp;
        else if (r)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

std::optional<double> overall_accuracy(const ConfusionCounts& c) { return ratio(c.tp + c.tn, c.total()); }
std::optional<double> recall(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn); }
std::optional<double> precision(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp); }
std::optional<double> iou(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp + c.fn); }

std::optional<double> mean_iou(const ConfusionCounts& positive, const ConfusionCounts& background) {
    const auto a = iou(positive), b = iou(background);
    if (!a || !b) return std::nullopt;
    return (*a + *b) / 2.0;
}

std::optional<double> f_score(double r, double p) {
    if (r + p <= 0.0) return std::nullopt;
    return 2.0 * r * p / (r + p);
}

std::optional<double> f_score(const ConfusionCounts& c) {
    const auto r = recall(c), p = precision(c);
    if (!r || !p) return std::nullopt;
    return f_score(*r, *p);
}

ClassMetrics class_metrics(const ConfusionCounts& c) {
    return {c, overall_accuracy(c), recall(c), precision(c), iou(c), mean_iou(c, c.background()), f_score(c)};
}

MetricReport evaluate_masks(const MaskRaster& pred, const MaskRaster& ref, std::span<const std::uint8_t> valid) {
    return {class_metrics(confusion(pred, ref, MaskClass::Cloud, valid)),
            class_metrics(confusion(pred, ref, MaskClass::Shadow, valid))};
}

std::map<std::uint8_t, MetricReport> stratified_accuracy(const MaskRaster& pred, const MaskRaster& ref,
                                                         std::span<const std::uint8_t> strata,
                                                         std::span<const std::uint8_t> valid) {
    check_shapes(pred, ref, valid, "stratified_accuracy");
    if (strata.size() != pred.labels.size())
        throw ShapeError("stratified_accuracy: stratum plane has " + std::to_string(strata.size()) +
                         " pixels, masks have " + std::to_string(pred.labels.size()));
    std::map<std::uint8_t, std::pair<ConfusionCounts, ConfusionCounts>> counts;
    for (std::size_t i = 0; i < strata.size(); ++i) {
        if (!valid.empty() && valid[i] == 0) continue;
        auto& [cloud, shadow] = counts[strata[i]];
        for (auto [cls, c] : {std::pair{MaskClass::Cloud, &cloud}, std::pair{MaskClass::Shadow, &shadow}}) {
            const bool p = is_positive(pred.labels[i], cls);
            const bool r = is_positive(ref.labels[i], cls);
            (p && r ? c->tp : p ? c->fp : r ? c->fn : c->tn) += 1;
        }
    }
    std::map<std::uint8_t, MetricReport> out;
    for (const auto& [id, c] : counts) out[id] = {class_metrics(c.first), class_metrics(c.second)};
    return out;
}

std::string format_metric(const std::optional<double>& v) {
    if (!v) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", *v);
    return buf;
}

std::string report_text(const MetricReport& report, const std::map<std::uint8_t, MetricReport>& strata) {
    std::string out;
    class_lines(out, "all", "cloud", report.cloud);
    class_lines(out, "all", "shadow", report.shadow);
    for (const auto& [id, r] : strata) {
        const std::string scope = "stratum" + std::to_string(id);
        class_lines(out, scope, "cloud", r.cloud);
        class_lines(out, scope, "shadow", r.shadow);
    }
    return out;
}

std::string report_json(const MetricReport& report, const std::map<std::uint8_t, MetricReport>& strata) {
    nlohmann::json j = {{"cloud", class_json(report.cloud)}, {"shadow", class_json(report.shadow)}};
    j["strata"] = nlohmann::json::object();
    for (const auto& [id, r] : strata)
        j["strata"][std::to_string(id)] = {{"cloud", class_json(r.cloud)}, {"shadow", class_json(r.shadow)}};
    return j.dump(2);
}

}  // namespace mscff
