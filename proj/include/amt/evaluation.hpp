// MIR metrics: frame and note F1, chord symbol recall, beat F-measure.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "amt/midi.hpp"
#include "amt/tensor.hpp"

namespace amt {

struct MetricReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int n_ref = 0;
  int n_est = 0;
  int n_match = 0;

  /// Two empty lists score 1; otherwise P = match/est, R = match/ref (0 when undefined).
  static MetricReport from_counts(int n_ref, int n_est, int n_match);
  /// "prefix.precision=..." lines, or unprefixed keys when prefix is empty.
  std::string to_text(const std::string& prefix = "") const;
};

/// Maximum-cardinality one-to-one matching in a bipartite graph given as adjacency lists
/// from left nodes to right nodes. Returns the matched (left, right) pairs.
std::vector<std::pair<int, int>> max_bipartite_matching(const std::vector<std::vector<int>>& adjacency,
                                                        int n_right);

/// Cells with value >= threshold count as active. Shapes must match.
MetricReport frame_f1(const ActivationTensor& ref, const ActivationTensor& est, double threshold = 0.5);

/// Pairs match iff equal pitch and |onset difference| <= onset_tol_s; offsets are ignored.
/// The one-to-one matching has maximum cardinality.
MetricReport note_f1(const std::vector<NoteEvent>& ref, const std::vector<NoteEvent>& est, double onset_tol_s = 0.05);

/// Micro-averaged note F1 over instrument streams: notes only match within streams of the
/// same instrument label, and counts are pooled before computing P/R/F1.
MetricReport note_f1_streams(const std::vector<NoteStream>& ref, const std::vector<NoteStream>& est,
                             double onset_tol_s = 0.05);

/// Duration-weighted fraction of time with equal labels. Both segmentations must cover the
/// same total span within 1 ms.
double chord_accuracy(const std::vector<ChordSegment>& ref, const std::vector<ChordSegment>& est);

struct BeatReport {
  MetricReport beats;
  MetricReport downbeats;
  std::string to_text() const;
};

BeatReport beat_f_measure(const BeatAnnotation& ref, const BeatAnnotation& est, double tol_s = 0.070);

}  // namespace amt
