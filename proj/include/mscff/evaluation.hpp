#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>

#include "mscff/raster.hpp"

namespace mscff {

enum class MaskClass { Cloud, Shadow };

std::string to_string(MaskClass c);

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + tn + fp + fn; }
    /// Same pixels with the roles of positive and negative swapped.
    ConfusionCounts background() const { return {tn, tp, fn, fp}; }

    ConfusionCounts& operator+=(const ConfusionCounts& o);
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Counts pixels of `positive` in pred against ref. `valid`, if non-empty,
/// holds one byte per pixel; zero bytes are skipped. Throws ShapeError on
/// mismatched sizes.
ConfusionCounts confusion(const MaskRaster& pred, const MaskRaster& ref, MaskClass positive,
                          std::span<const std::uint8_t> valid = {});

// Every metric is nullopt when its denominator is empty.
std::optional<double> overall_accuracy(const ConfusionCounts& c);
std::optional<double> recall(const ConfusionCounts& c);
std::optional<double> precision(const ConfusionCounts& c);
std::optional<double> iou(const ConfusionCounts& c);
/// Mean of the positive-class and background-class IoU; nullopt if either is.
std::optional<double> mean_iou(const ConfusionCounts& positive, const ConfusionCounts& background);
std::optional<double> f_score(double recall, double precision);
/// From counts; nullopt if recall or precision is undefined or both are 0.
std::optional<double> f_score(const ConfusionCounts& c);

struct ClassMetrics {
    ConfusionCounts counts;
    std::optional<double> oa;
    std::optional<double> recall;
    std::optional<double> precision;
    std::optional<double> iou;  // positive class only
    std::optional<double> miou;  // two-class mean
    std::optional<double> f1;
};

ClassMetrics class_metrics(const ConfusionCounts& c);

struct MetricReport {
    ClassMetrics cloud;
    ClassMetrics shadow;
};

MetricReport evaluate_masks(const MaskRaster& pred, const MaskRaster& ref, std::span<const std::uint8_t> valid = {});

/// Per-stratum reports keyed by stratum id; ids with no valid pixel are absent.
std::map<std::uint8_t, MetricReport> stratified_accuracy(const MaskRaster& pred, const MaskRaster& ref,
                                                         std::span<const std::uint8_t> strata,
                                                         std::span<const std::uint8_t> valid = {});

/// Four significant digits, or "undefined".
std::string format_metric(const std::optional<double>& v);

/// Line-oriented text: one `scope<TAB>class<TAB>metric<TAB>value` line each.
std::string report_text(const MetricReport& report, const std::map<std::uint8_t, MetricReport>& strata = {});

/// `{cloud: {...}, shadow: {...}, strata: {"<id>": {cloud, shadow}}}` with
/// undefined metrics as null.
std::string report_json(const MetricReport& report, const std::map<std::uint8_t, MetricReport>& strata = {});

}  // namespace mscff
