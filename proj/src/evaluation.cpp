#include "amt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "amt/error.hpp"

namespace amt {

MetricReport MetricReport::from_counts(int n_ref, int n_est, int n_match) {
  MetricReport r;
  r.n_ref = n_ref;
  r.n_est = n_est;
  r.n_match = n_match;
  if (n_ref == 0 && n_est == 0) {
    r.precision = r.recall = r.f1 = 1.0;
    return r;
  }
  r.precision = n_est > 0 ? static_cast<double>(n_match) / n_est : 0.0;
  r.recall = n_ref > 0 ? static_cast<double>(n_match) / n_ref : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

std::string MetricReport::to_text(const std::string& prefix) const {
  const std::string p = prefix.empty() ? "" : prefix + ".";
  std::ostringstream os;
  os.precision(6);
  os << p << "precision=" << precision << "\n"
     << p << "recall=" << recall << "\n"
     << p << "f1=" << f1 << "\n"
     << p << "n_ref=" << n_ref << "\n"
     << p << "n_est=" << n_est << "\n"
     << p << "n_match=" << n_match << "\n";
  return os.str();
}

std::vector<std::pair<int, int>> max_bipartite_matching(const std::vector<std::vector<int>>& adjacency,
                                                        int n_right) {
  // Kuhn's augmenting paths with an explicit stack.
  std::vector<int> match_right(n_right, -1);
  std::vector<int> visited(n_right, -1);
  const int n_left = static_cast<int>(adjacency.size());
  for (int root = 0; root < n_left; ++root) {
    struct Frame {
      int left;
      std::size_t next;
      int via;  // right node that led here, -1 for the root
    };
    std::vector<Frame> stack{{root, 0, -1}};
    bool augmented = false;
    while (!stack.empty() && !augmented) {
      Frame& f = stack.back();
      if (f.next == adjacency[f.left].size()) {
        stack.pop_back();
        continue;
      }
      const int r = adjacency[f.left][f.next++];
      if (r < 0 || r >= n_right || visited[r] == root) continue;
      visited[r] = root;
      if (match_right[r] < 0) {
        // Flip the path: each frame's left node takes the right node chosen from it.
        int right = r;
        for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
          const int prev = it->via;
          match_right[right] = it->left;
          right = prev;
        }
        augmented = true;
      } else {
        stack.push_back({match_right[r], 0, r});
      }
    }
  }
  std::vector<std::pair<int, int>> pairs;
  for (int r = 0; r < n_right; ++r)
    if (match_right[r] >= 0) pairs.emplace_back(match_right[r], r);
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

MetricReport frame_f1(const ActivationTensor& ref, const ActivationTensor& est, double threshold) {
  if (!ref.values.same_shape(est.values))
    throw ContractError("frame_f1: shape " + ref.values.shape_string() + " vs " + est.values.shape_string());
  long n_ref = 0, n_est = 0, n_match = 0;
  for (int c = 0; c < ref.values.channels(); ++c) {
    const auto r = (ref.values.channel(c).array() >= threshold);
    const auto e = (est.values.channel(c).array() >= threshold);
    n_ref += r.count();
    n_est += e.count();
    n_match += (r && e).count();
  }
  return MetricReport::from_counts(static_cast<int>(n_ref), static_cast<int>(n_est), static_cast<int>(n_match));
}

namespace {

constexpr double kEps = 1e-9;

int count_note_matches(const std::vector<NoteEvent>& ref, const std::vector<NoteEvent>& est, double tol) {
  // Edges only between same-pitch notes within tolerance; est indices grouped by pitch
  // and sorted by onset keep the candidate scan local.
  std::map<int, std::vector<int>> by_pitch;
  for (int j = 0; j < static_cast<int>(est.size()); ++j) by_pitch[est[j].pitch].push_back(j);
  for (auto& [pitch, idx] : by_pitch)
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return est[a].onset_s < est[b].onset_s; });
  std::vector<std::vector<int>> adj(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    auto it = by_pitch.find(ref[i].pitch);
    if (it == by_pitch.end()) continue;
    const auto& idx = it->second;
    auto lo = std::lower_bound(idx.begin(), idx.end(), ref[i].onset_s - tol - kEps,
                               [&](int j, double t) { return est[j].onset_s < t; });
    for (auto jt = lo; jt != idx.end() && est[*jt].onset_s <= ref[i].onset_s + tol + kEps; ++jt)
      if (std::abs(est[*jt].onset_s - ref[i].onset_s) <= tol + kEps) adj[i].push_back(*jt);
  }
  return static_cast<int>(max_bipartite_matching(adj, static_cast<int>(est.size())).size());
}

int count_time_matches(const std::vector<double>& ref, const std::vector<double>& est, double tol) {
  std::vector<double> sorted_est = est;
  std::sort(sorted_est.begin(), sorted_est.end());
  std::vector<std::vector<int>> adj(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    auto lo = std::lower_bound(sorted_est.begin(), sorted_est.end(), ref[i] - tol - kEps);
    for (auto it = lo; it != sorted_est.end() && *it <= ref[i] + tol + kEps; ++it)
      adj[i].push_back(static_cast<int>(it - sorted_est.begin()));
  }
  return static_cast<int>(max_bipartite_matching(adj, static_cast<int>(est.size())).size());
}

}  // namespace

MetricReport note_f1(const std::vector<NoteEvent>& ref, const std::vector<NoteEvent>& est, double onset_tol_s) {
  return MetricReport::from_counts(static_cast<int>(ref.size()), static_cast<int>(est.size()),
                                   count_note_matches(ref, est, onset_tol_s));
}

MetricReport note_f1_streams(const std::vector<NoteStream>& ref, const std::vector<NoteStream>& est,
                             double onset_tol_s) {
  std::map<std::string, std::pair<std::vector<NoteEvent>, std::vector<NoteEvent>>> pooled;
  for (const auto& s : ref) {
    auto& v = pooled[s.instrument].first;
    v.insert(v.end(), s.notes.begin(), s.notes.end());
  }
  for (const auto& s : est) {
    auto& v = pooled[s.instrument].second;
    v.insert(v.end(), s.notes.begin(), s.notes.end());
  }
  int n_ref = 0, n_est = 0, n_match = 0;
  for (const auto& [name, lists] : pooled) {
    n_ref += static_cast<int>(lists.first.size());
    n_est += static_cast<int>(lists.second.size());
    n_match += count_note_matches(lists.first, lists.second, onset_tol_s);
  }
  return MetricReport::from_counts(n_ref, n_est, n_match);
}

double chord_accuracy(const std::vector<ChordSegment>& ref, const std::vector<ChordSegment>& est) {
  auto span = [](const std::vector<ChordSegment>& s) {
    double total = 0.0;
    for (const auto& c : s) total += c.end_s - c.start_s;
    return total;
  };
  const double total_ref = span(ref), total_est = span(est);
  if (std::abs(total_ref - total_est) > 1e-3)
    throw ContractError("chord_accuracy: reference covers " + std::to_string(total_ref) + " s, estimate " +
                        std::to_string(total_est) + " s");
  if (total_ref <= 0.0) return 1.0;
  double agree = 0.0;
  for (const auto& r : ref)
    for (const auto& e : est) {
      if (r.label != e.label) continue;
      const double overlap = std::min(r.end_s, e.end_s) - std::max(r.start_s, e.start_s);
      if (overlap > 0) agree += overlap;
    }
  return std::clamp(agree / total_ref, 0.0, 1.0);
}

std::string BeatReport::to_text() const { return beats.to_text("beat") + downbeats.to_text("downbeat"); }

BeatReport beat_f_measure(const BeatAnnotation& ref, const BeatAnnotation& est, double tol_s) {
  BeatReport out;
  out.beats = MetricReport::from_counts(static_cast<int>(ref.beats_s.size()), static_cast<int>(est.beats_s.size()),
                                        count_time_matches(ref.beats_s, est.beats_s, tol_s));
  out.downbeats = MetricReport::from_counts(static_cast<int>(ref.downbeats_s.size()),
                                            static_cast<int>(est.downbeats_s.size()),
                                            count_time_matches(ref.downbeats_s, est.downbeats_s, tol_s));
  return out;
}

}  // namespace amt
