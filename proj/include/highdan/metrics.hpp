#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "highdan/losses.hpp"

namespace highdan {

/// l×l pixel counts; row = true class, column = predicted class (dense
/// class indices, see ClassIndexer).
class ConfusionMatrix {
 public:
  using Counts = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

  explicit ConfusionMatrix(Index num_classes = 0) : counts_(Counts::Zero(num_classes, num_classes)) {}
  explicit ConfusionMatrix(Counts counts);

  Index num_classes() const { return counts_.rows(); }
  const Counts& counts() const { return counts_; }
  std::int64_t operator()(Index truth, Index pred) const { return counts_(truth, pred); }
  std::int64_t total() const { return counts_.sum(); }

  ConfusionMatrix operator+(const ConfusionMatrix& other) const;
  bool operator==(const ConfusionMatrix& other) const { return counts_ == other.counts_; }

 private:
  Counts counts_;
};

/// Returns cm plus the counts of every pixel whose gt label is not ignored.
/// Labels are raw label values; `indexer` maps them to class indices.
ConfusionMatrix accumulate(const ConfusionMatrix& cm, std::span<const std::uint8_t> pred,
                           std::span<const std::uint8_t> gt, const ClassIndexer& indexer);

double overall_accuracy(const ConfusionMatrix& cm);

struct PerClassScores {
  std::vector<std::optional<double>> per_class;  // nullopt = class unsupported
  double mean = 0;
};

/// IoU_i = p_ii / (row_i + col_i − p_ii); unsupported classes (row_i + col_i = 0)
/// are excluded from the mean.
PerClassScores mean_iou(const ConfusionMatrix& cm);

enum class F1Mode {
  Standard,     ///< macro F1 with P_i = p_ii/col_i, R_i = p_ii/row_i
  PaperLiteral  ///< P, R summed with denominators row_i + p_ii and col_i + p_ii
};

PerClassScores mean_f1(const ConfusionMatrix& cm, F1Mode mode = F1Mode::Standard);

std::string to_string(F1Mode mode);
F1Mode f1_mode_from_string(const std::string& name);

struct MetricsReport {
  double oa = 0;
  PerClassScores iou;
  PerClassScores f1;
  F1Mode mode = F1Mode::Standard;
  ConfusionMatrix confusion;
  std::vector<std::string> class_names;
  ClassIndexer indexer;
};

MetricsReport make_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names,
                          const ClassIndexer& indexer, F1Mode mode = F1Mode::Standard);

/// Keys: oa, miou, mf1, per_class[{class_id, name, iou, f1}], confusion, mode,
/// evaluated_pixels. Unsupported classes serialize iou/f1 as null.
nlohmann::json report_to_json(const MetricsReport& report);

/// Fixed-width text table (per-class rows then OA / mIoU / mF1).
std::string format_report_table(const MetricsReport& report);

}  // namespace highdan
