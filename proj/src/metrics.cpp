#include "highdan/metrics.hpp"

#include <iomanip>
#include <sstream>

namespace highdan {

ConfusionMatrix::ConfusionMatrix(Counts counts) : counts_(std::move(counts)) {
  if (counts_.rows() != counts_.cols()) throw ArgumentError("confusion matrix must be square");
  if ((counts_.array() < 0).any()) throw DataError("confusion matrix counts must be non-negative");
}

ConfusionMatrix ConfusionMatrix::operator+(const ConfusionMatrix& other) const {
  if (other.num_classes() != num_classes()) throw ArgumentError("confusion matrix size mismatch");
  return ConfusionMatrix(Counts(counts_ + other.counts_));
}

ConfusionMatrix accumulate(const ConfusionMatrix& cm, std::span<const std::uint8_t> pred,
                           std::span<const std::uint8_t> gt, const ClassIndexer& indexer) {
  if (pred.size() != gt.size()) throw ArgumentError("accumulate: prediction and ground truth extents differ");
  if (indexer.num_classes != cm.num_classes()) throw ArgumentError("accumulate: indexer class count mismatch");
  ConfusionMatrix::Counts counts = cm.counts();
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int t = indexer.to_index(gt[i]);
    if (t < 0) continue;
    const int p = indexer.to_index(pred[i]);
    if (p < 0) throw DataError("accumulate: prediction uses the ignore label at a labeled pixel");
    ++counts(t, p);
  }
  return ConfusionMatrix(std::move(counts));
}

namespace {

void require_nonempty(const ConfusionMatrix& cm) {
  if (cm.total() <= 0) throw UndefinedMetricError("metric undefined: no evaluated pixels");
}

double mean_of(const std::vector<std::optional<double>>& values) {
  double sum = 0;
  int n = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

}  // namespace

double overall_accuracy(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  return static_cast<double>(cm.counts().trace()) / static_cast<double>(cm.total());
}

PerClassScores mean_iou(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  const auto& m = cm.counts();
  PerClassScores s;
  for (Index i = 0; i < cm.num_classes(); ++i) {
    const double tp = static_cast<double>(m(i, i));
    const double row = static_cast<double>(m.row(i).sum());
    const double col = static_cast<double>(m.col(i).sum());
    if (row + col == 0) {
      s.per_class.emplace_back(std::nullopt);
    } else {
      s.per_class.emplace_back(tp / (row + col - tp));
    }
  }
  s.mean = mean_of(s.per_class);
  return s;
}

PerClassScores mean_f1(const ConfusionMatrix& cm, F1Mode mode) {
  require_nonempty(cm);
  const auto& m = cm.counts();
  PerClassScores s;
  double p_sum = 0, r_sum = 0;
  for (Index i = 0; i < cm.num_classes(); ++i) {
    const double tp = static_cast<double>(m(i, i));
    const double row = static_cast<double>(m.row(i).sum());
    const double col = static_cast<double>(m.col(i).sum());
    if (mode == F1Mode::Standard) {
      if (row + col == 0) {
        s.per_class.emplace_back(std::nullopt);
      } else {
        s.per_class.emplace_back(2 * tp / (row + col));
      }
      continue;
    }
    // Literal form: P = Σ_i p_ii / (Σ_j p_ij + p_ii), R = Σ_i p_ii / (Σ_j p_ji + p_ii).
    const double p_i = row + tp > 0 ? tp / (row + tp) : 0.0;
    const double r_i = col + tp > 0 ? tp / (col + tp) : 0.0;
    p_sum += p_i;
    r_sum += r_i;
    if (row + col == 0) {
      s.per_class.emplace_back(std::nullopt);
    } else {
      s.per_class.emplace_back(p_i + r_i > 0 ? 2 * p_i * r_i / (p_i + r_i) : 0.0);
    }
  }
  if (mode == F1Mode::Standard) {
    s.mean = mean_of(s.per_class);
  } else {
    const double l = static_cast<double>(cm.num_classes());
    s.mean = p_sum + r_sum > 0 ? (1.0 / l) * (2 * p_sum * r_sum / (p_sum + r_sum)) : 0.0;
  }
  return s;
}

std::string to_string(F1Mode mode) { return mode == F1Mode::Standard ? "standard" : "paper_literal"; }

F1Mode f1_mode_from_string(const std::string& name) {
  if (name == "standard") return F1Mode::Standard;
  if (name == "paper_literal") return F1Mode::PaperLiteral;
  throw ArgumentError("unknown F1 mode '" + name + "' (expected standard or paper_literal)");
}

MetricsReport make_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names,
                          const ClassIndexer& indexer, F1Mode mode) {
  MetricsReport r;
  r.oa = overall_accuracy(cm);
  r.iou = mean_iou(cm);
  r.f1 = mean_f1(cm, mode);
  r.mode = mode;
  r.confusion = cm;
  r.class_names = class_names;
  r.indexer = indexer;
  return r;
}

nlohmann::json report_to_json(const MetricsReport& report) {
  using nlohmann::json;
  auto nullable = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json per_class = json::array();
  for (Index i = 0; i < report.confusion.num_classes(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    per_class.push_back({{"class_id", report.indexer.to_label(static_cast<int>(i))},
                         {"name", k < report.class_names.size() ? report.class_names[k] : std::to_string(i)},
                         {"iou", nullable(report.iou.per_class[k])},
                         {"f1", nullable(report.f1.per_class[k])}});
  }
  json confusion = json::array();
  for (Index i = 0; i < report.confusion.num_classes(); ++i) {
    json row = json::array();
    for (Index j = 0; j < report.confusion.num_classes(); ++j) row.push_back(report.confusion(i, j));
    confusion.push_back(std::move(row));
  }
  return {{"oa", report.oa},
          {"miou", report.iou.mean},
          {"mf1", report.f1.mean},
          {"per_class", std::move(per_class)},
          {"confusion", std::move(confusion)},
          {"mode", to_string(report.mode)},
          {"evaluated_pixels", report.confusion.total()}};
}

std::string format_report_table(const MetricsReport& report) {
  std::ostringstream os;
  auto cell = [](const std::optional<double>& v) {
    std::ostringstream c;
    if (v) {
      c << std::fixed << std::setprecision(2) << 100.0 * *v;
    } else {
      c << "--";
    }
    return c.str();
  };
  os << std::left << std::setw(6) << "id" << std::setw(24) << "class" << std::right << std::setw(9) << "IoU(%)"
     << std::setw(9) << "F1(%)" << "\n";
  for (Index i = 0; i < report.confusion.num_classes(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    os << std::left << std::setw(6) << report.indexer.to_label(static_cast<int>(i)) << std::setw(24)
       << (k < report.class_names.size() ? report.class_names[k] : std::to_string(i)) << std::right << std::setw(9)
       << cell(report.iou.per_class[k]) << std::setw(9) << cell(report.f1.per_class[k]) << "\n";
  }
  os << std::fixed << std::setprecision(2) << "OA   " << 100.0 * report.oa << "\n"
     << "mIoU " << 100.0 * report.iou.mean << "\n"
     << "mF1  " << 100.0 * report.f1.mean << " (" << to_string(report.mode) << ")\n"
     << "evaluated pixels " << report.confusion.total() << "\n";
  return os.str();
}

}  // namespace highdan
