#include "hiad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include "json.hpp"

#include "hiad/error.hpp"

namespace hiad {

namespace {

template <class T>
void split_by_label(std::span<const T> scores, std::span<const std::uint8_t> labels, std::vector<T>& pos,
                    std::vector<T>& neg) {
  require(scores.size() == labels.size(), ErrorKind::contract,
          "metric: " + std::to_string(scores.size()) + " scores but " + std::to_string(labels.size()) + " labels");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    require(std::isfinite(scores[i]), ErrorKind::contract, "metric: score " + std::to_string(i) + " is not finite");
    require(labels[i] <= 1, ErrorKind::contract, "metric: labels must be 0 or 1");
    (labels[i] ? pos : neg).push_back(scores[i]);
  }
}

// Walks tie groups in descending score order. fn(score, pos_in_group, neg_in_group).
template <class T, class Fn>
void walk_groups(std::vector<T>& pos, std::vector<T>& neg, Fn&& fn) {
  std::sort(pos.begin(), pos.end(), std::greater<T>());
  std::sort(neg.begin(), neg.end(), std::greater<T>());
  std::size_t i = 0, j = 0;
  while (i < pos.size() || j < neg.size()) {
    T v;
    if (i == pos.size())
      v = neg[j];
    else if (j == neg.size())
      v = pos[i];
    else
      v = std::max(pos[i], neg[j]);
    std::size_t gp = 0, gn = 0;
    while (i < pos.size() && pos[i] == v) ++i, ++gp;
    while (j < neg.size() && neg[j] == v) ++j, ++gn;
    fn(static_cast<double>(v), gp, gn);
  }
}

template <class T>
RankMetrics rank_metrics_impl(std::vector<T>& pos, std::vector<T>& neg, bool need_negatives) {
  const std::size_t P = pos.size(), N = neg.size();
  require(P > 0, ErrorKind::undefined_metric, "metric undefined: no positive samples");
  require(!need_negatives || N > 0, ErrorKind::undefined_metric, "metric undefined: no negative samples");
  RankMetrics out;
  // 2 * Mann-Whitney numerator: each pair above counts 2, each tie counts 1.
  __int128 twice_wins = 0;
  std::size_t neg_seen = 0, tp = 0, fp = 0;
  double ap = 0.0;
  out.f1.f1 = -1.0;
  walk_groups(pos, neg, [&](double v, std::size_t gp, std::size_t gn) {
    const std::size_t neg_below = N - neg_seen - gn;
    twice_wins += static_cast<__int128>(gp) * (2 * neg_below + gn);
    neg_seen += gn;
    tp += gp;
    fp += gn;
    if (gp > 0) ap += static_cast<double>(gp) * (static_cast<double>(tp) / static_cast<double>(tp + fp));
    const double f1 = 2.0 * tp / static_cast<double>(2 * tp + fp + (P - tp));
    if (f1 > out.f1.f1) out.f1 = {f1, v};
  });
  if (N > 0) out.auroc = static_cast<double>(twice_wins) / (2.0 * static_cast<double>(P) * static_cast<double>(N));
  out.average_precision = ap / static_cast<double>(P);
  return out;
}

template <class T>
RankMetrics from_spans(std::span<const T> scores, std::span<const std::uint8_t> labels, bool need_negatives) {
  std::vector<T> pos, neg;
  split_by_label(scores, labels, pos, neg);
  return rank_metrics_impl(pos, neg, need_negatives);
}

}  // namespace

double auroc(std::span<const double> s, std::span<const std::uint8_t> l) { return from_spans(s, l, true).auroc; }
double auroc(std::span<const float> s, std::span<const std::uint8_t> l) { return from_spans(s, l, true).auroc; }
double average_precision(std::span<const double> s, std::span<const std::uint8_t> l) {
  return from_spans(s, l, false).average_precision;
}
double average_precision(std::span<const float> s, std::span<const std::uint8_t> l) {
  return from_spans(s, l, false).average_precision;
}
F1Max f1_max(std::span<const double> s, std::span<const std::uint8_t> l) { return from_spans(s, l, false).f1; }
F1Max f1_max(std::span<const float> s, std::span<const std::uint8_t> l) { return from_spans(s, l, false).f1; }

RankMetrics rank_metrics(std::vector<float>& positives, std::vector<float>& negatives) {
  return rank_metrics_impl(positives, negatives, true);
}

Components connected_components(const ScalarMap& mask, int connectivity) {
  require(connectivity == 4 || connectivity == 8, ErrorKind::contract, "connectivity must be 4 or 8");
  const int h = mask.height, w = mask.width;
  Components out;
  out.height = h;
  out.width = w;
  out.labels.assign(mask.size(), 0);
  std::vector<int> parent{0};
  auto find = [&](int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  };
  auto unite = [&](int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };
  std::vector<int>& lab = out.labels;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!(mask.at(y, x) > 0.5f)) continue;
      int provisional = 0;
      auto visit = [&](int yy, int xx) {
        if (yy < 0 || xx < 0 || xx >= w) return;
        const int l = lab[static_cast<std::size_t>(yy) * w + xx];
        if (l == 0) return;
        if (provisional == 0)
          provisional = l;
        else
          unite(provisional, l);
      };
      visit(y, x - 1);
      visit(y - 1, x);
      if (connectivity == 8) {
        visit(y - 1, x - 1);
        visit(y - 1, x + 1);
      }
      if (provisional == 0) {
        provisional = static_cast<int>(parent.size());
        parent.push_back(provisional);
      }
      lab[static_cast<std::size_t>(y) * w + x] = provisional;
    }
  // Second pass: resolve roots and renumber by first appearance.
  std::vector<int> final_id(parent.size(), 0);
  for (int& l : lab) {
    if (l == 0) continue;
    const int root = find(l);
    if (final_id[root] == 0) final_id[root] = ++out.count;
    l = final_id[root];
  }
  return out;
}

double pro(const ScalarMap& map, const ScalarMap& mask, double fpr_limit, int thresholds) {
  require(map.height == mask.height && map.width == mask.width, ErrorKind::contract,
          "pro: map and mask sizes differ");
  require(fpr_limit > 0.0 && fpr_limit <= 1.0, ErrorKind::config, "pro: fpr_limit must be in (0, 1]");
  require(thresholds >= 2, ErrorKind::config, "pro: at least two thresholds are required");
  const Components cc = connected_components(mask, 8);
  require(cc.count > 0, ErrorKind::undefined_metric, "PRO undefined: mask has no foreground region");
  const std::size_t n = map.size();
  std::vector<std::size_t> region_size(cc.count + 1, 0);
  for (int l : cc.labels) ++region_size[l];
  const std::size_t negatives = region_size[0];
  require(negatives > 0, ErrorKind::undefined_metric, "PRO undefined: mask has no background pixels");
  for (float v : map.data) require(std::isfinite(v), ErrorKind::contract, "pro: map value is not finite");

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return map.data[a] > map.data[b] || (map.data[a] == map.data[b] && a < b);
  });
  std::vector<float> distinct;
  for (std::uint32_t idx : order)
    if (distinct.empty() || map.data[idx] != distinct.back()) distinct.push_back(map.data[idx]);
  std::vector<float> ladder;
  if (static_cast<int>(distinct.size()) <= thresholds) {
    ladder = distinct;
  } else {
    const std::size_t m = distinct.size();
    for (int k = 0; k < thresholds; ++k) {
      const std::size_t q = static_cast<std::size_t>(
          std::llround(static_cast<double>(k) * static_cast<double>(m - 1) / static_cast<double>(thresholds - 1)));
      if (ladder.empty() || distinct[q] != ladder.back()) ladder.push_back(distinct[q]);
    }
  }

  const double inv_regions = 1.0 / cc.count;
  double overlap = 0.0;
  std::size_t fp = 0, cursor = 0;
  double prev_f = 0.0, prev_p = 0.0, area = 0.0;
  for (float t : ladder) {
    while (cursor < n && map.data[order[cursor]] >= t) {
      const int l = cc.labels[order[cursor]];
      if (l == 0)
        ++fp;
      else
        overlap += 1.0 / static_cast<double>(region_size[l]);
      ++cursor;
    }
    const double f = static_cast<double>(fp) / static_cast<double>(negatives);
    const double p = overlap * inv_regions;
    if (f >= fpr_limit) {
      const double p_limit = f > prev_f ? prev_p + (p - prev_p) * (fpr_limit - prev_f) / (f - prev_f) : p;
      area += (fpr_limit - prev_f) * (prev_p + p_limit) * 0.5;
      return area / fpr_limit;
    }
    area += (f - prev_f) * (prev_p + p) * 0.5;
    prev_f = f;
    prev_p = p;
  }
  // The lowest ladder value admits every pixel, so the FPR reaches 1 above.
  return area / fpr_limit;
}

PixelEvaluator::PixelEvaluator(int eval_size, double fpr_limit, int thresholds)
    : eval_size_(eval_size), fpr_limit_(fpr_limit), thresholds_(thresholds) {
  require(eval_size >= 1, ErrorKind::config, "eval size must be positive");
}

void PixelEvaluator::add(const ScalarMap& map, const ScalarMap& mask) {
  require(map.height == mask.height && map.width == mask.width, ErrorKind::contract,
          "evaluate: map " + std::to_string(map.height) + "x" + std::to_string(map.width) + " and mask " +
              std::to_string(mask.height) + "x" + std::to_string(mask.width) + " differ in size");
  const bool same = map.height == eval_size_ && map.width == eval_size_;
  const ScalarMap m = same ? map : resize_bilinear(map, eval_size_, eval_size_);
  const ScalarMap g = same ? mask : resize_mask(mask, eval_size_, eval_size_);
  bool any = false;
  for (std::size_t i = 0; i < m.size(); ++i) {
    require(std::isfinite(m.data[i]), ErrorKind::contract, "evaluate: anomaly map value is not finite");
    if (g.data[i] > 0.5f) {
      positives_.push_back(m.data[i]);
      any = true;
    } else {
      negatives_.push_back(m.data[i]);
    }
  }
  if (any) pro_values_.push_back(pro(m, g, fpr_limit_, thresholds_));
  ++images_;
}

PixelMetrics PixelEvaluator::finish() const {
  std::vector<float> pos = positives_, neg = negatives_;
  const RankMetrics r = rank_metrics(pos, neg);
  PixelMetrics out;
  out.p_auc = r.auroc;
  out.p_ap = r.average_precision;
  out.p_f1 = r.f1.f1;
  double sum = 0.0;
  for (double v : pro_values_) sum += v;
  out.pro = sum / static_cast<double>(pro_values_.size());
  out.images = images_;
  out.images_with_defects = pro_values_.size();
  out.positive_pixels = positives_.size();
  out.pixels = positives_.size() + negatives_.size();
  return out;
}

PixelMetrics evaluate_pixels(const std::vector<ScalarMap>& maps, const std::vector<ScalarMap>& masks, int eval_size) {
  require(maps.size() == masks.size(), ErrorKind::contract, "evaluate_pixels: maps and masks differ in count");
  PixelEvaluator ev(eval_size);
  for (std::size_t i = 0; i < maps.size(); ++i) ev.add(maps[i], masks[i]);
  return ev.finish();
}

double evaluate_images(std::span<const double> image_scores, std::span<const std::uint8_t> image_labels) {
  return auroc(image_scores, image_labels);
}

double relative_defect_area(const ScalarMap& mask) {
  require(mask.size() > 0, ErrorKind::contract, "relative_defect_area: empty mask");
  std::size_t fg = 0;
  for (float v : mask.data) fg += v > 0.5f;
  return static_cast<double>(fg) / static_cast<double>(mask.size());
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = "hiad-report/1";
  j["i_auc"] = i_auc;
  j["p_auc"] = p_auc;
  j["p_ap"] = p_ap;
  j["p_f1"] = p_f1;
  j["pro"] = pro;
  j["eval_size"] = eval_size;
  j["images"] = images;
  j["anomalous_images"] = anomalous_images;
  j["positive_pixels"] = positive_pixels;
  return j.dump(2) + "\n";
}

std::string EvalReport::to_table() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%-8s %-8s %-8s %-8s %-8s\n%-8.4f %-8.4f %-8.4f %-8.4f %-8.4f\n"
                "images %zu (anomalous %zu), eval size %d\n",
                "I-AUC", "P-AUC", "P-AP", "P-F1", "PRO", i_auc, p_auc, p_ap, p_f1, pro, images, anomalous_images,
                eval_size);
  return buf;
}

}  // namespace hiad
