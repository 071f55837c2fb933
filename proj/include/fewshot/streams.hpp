#pragma once
// Metric streams comparing a class-aggregated support feature map with a
// query feature map. Each stream yields a matching score in (0,1):
//
//   appearance    CNN over the channel-concatenated pair
//   corr_channel  distance between CxC correlation (Gram) matrices
//   corr_spatial  distance between DxD correlation matrices, D = h*w
//   mi            local-global head: the max-pooled support vector paired with
//                 every local feature of the query
//
// Episode-level scoring returns one [n_query, ways] score matrix per enabled
// stream, row j / column c comparing query j with class c.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fewshot/layers.hpp"

namespace fewshot {

enum class Stream : std::size_t { kAppearance = 0, kCorrChannel = 1, kCorrSpatial = 2, kMutualInfo = 3 };
inline constexpr std::size_t kStreamCount = 4;
inline constexpr std::array<Stream, kStreamCount> kAllStreams = {
    Stream::kAppearance, Stream::kCorrChannel, Stream::kCorrSpatial, Stream::kMutualInfo};

template <class T>
using PerStream = std::array<T, kStreamCount>;

constexpr std::size_t index_of(Stream s) { return static_cast<std::size_t>(s); }
// Config spelling: appearance, corr_channel, corr_spatial, mi.
std::string_view stream_name(Stream s);
// Metrics-column spelling: a, corrC, corrD, MI.
std::string_view stream_tag(Stream s);
std::optional<Stream> parse_stream(std::string_view name);

class StreamSet {
 public:
  StreamSet() = default;
  StreamSet(std::initializer_list<Stream> streams);
  static StreamSet all() { return {Stream::kAppearance, Stream::kCorrChannel, Stream::kCorrSpatial, Stream::kMutualInfo}; }
  // Comma-separated stream names (or "all"); throws ConfigError on unknown names.
  static StreamSet parse(std::string_view text);

  bool contains(Stream s) const { return on_[index_of(s)]; }
  void set(Stream s, bool enabled) { on_[index_of(s)] = enabled; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  std::string str() const;
  bool operator==(const StreamSet&) const = default;

 private:
  std::array<bool, kStreamCount> on_{};
};

enum class MiMode { kPooled, kDense };
enum class NormGranularity { kGlobal, kChannel };
enum class CorrKind { kSpatial, kChannel };

// ---- correlation statistics ---------------------------------------------------

// Subtracts the mean, divides by the standard deviation (global scalars, or
// per channel row) and then by the Frobenius norm of the result, so the
// output has unit Frobenius norm. Accepts one map [C,D] or a stack [N,C,D].
// A constant map normalises to zeros and bumps normalize_degenerate_count().
Tensor normalize_map(const Tensor& features, NormGranularity granularity = NormGranularity::kGlobal);
std::uint64_t normalize_degenerate_count();

// Gram matrices of a normalised map: spatial norm(F)^T norm(F) [D,D] and
// channel norm(F) norm(F)^T [C,C]. Accept [C,D] or [N,C,D].
Tensor corr_spatial(const Tensor& normalized);
Tensor corr_channel(const Tensor& normalized);
Tensor correlation(const Tensor& normalized, CorrKind kind);

// ---- heads ------------------------------------------------------------------------

struct FeatureMapPair {
  Tensor support;  // [C,h,w], class-aggregated
  Tensor query;    // [C,h,w]
};

// Scalar distance -> sigmoid(w * d + b).
class RelationHead {
 public:
  RelationHead();
  Tensor score(const Tensor& distance) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& params);

  Tensor weight;  // [1]
  Tensor bias;    // [1]
};

// Two conv blocks (as embedding blocks 1-2) over the 2C-channel pair map,
// then fc(8) -> ReLU -> fc(1) -> sigmoid.
class AppearanceHead {
 public:
  AppearanceHead() = default;
  AppearanceHead(std::size_t channels, std::size_t map_h, std::size_t map_w, Rng& rng);

  // Reference route: pair maps [P, 2C, h, w] (support channels first) -> [P].
  Tensor score_pairs(const Tensor& pair_maps, bool training);
  // Same function for every query x class pair without materialising the
  // concatenated maps: the first convolution is split into its support and
  // query halves. support [W,C,h,w], query [n,C,h,w] -> [n,W].
  Tensor score_episode(const Tensor& support, const Tensor& query, bool training);

  void collect(const std::string& prefix, std::vector<NamedTensor>& params,
               std::vector<NamedTensor>& buffers);

  ConvBlock block1;
  ConvBlock block2;
  Linear fc1;
  Linear fc2;

 private:
  Tensor tail(const Tensor& first_conv, bool training);
  std::size_t channels_ = 0;
};

// Local-global mutual-information head. Pooled mode runs a conv sub-network
// over the [E ; f_d] map (the second pooling is dropped for maps under 8x8)
// and two fc layers; dense mode scores every location with a 1x1
// fc(8) -> ReLU -> fc(1) -> sigmoid head and averages the location scores.
class MutualInfoHead {
 public:
  MutualInfoHead() = default;
  MutualInfoHead(std::size_t channels, std::size_t map_h, std::size_t map_w, MiMode mode, Rng& rng);

  MiMode mode() const { return mode_; }

  // global [P,C] support descriptors, query maps [P,C,h,w] -> [P].
  Tensor score_pairs(const Tensor& global, const Tensor& query_maps, bool training);
  // support [W,C,h,w], query [n,C,h,w] -> [n,W].
  Tensor score_episode(const Tensor& support, const Tensor& query, bool training);
  // Dense mode only: per-location scores [P, h*w] before averaging.
  Tensor dense_location_scores(const Tensor& global, const Tensor& query_maps);

  void collect(const std::string& prefix, std::vector<NamedTensor>& params,
               std::vector<NamedTensor>& buffers);

  // pooled
  ConvBlock block1;
  ConvBlock block2;
  Linear fc1;
  Linear fc2;
  // dense, 1x1 convolutions
  Tensor dense1_weight;  // [8, 2C, 1, 1]
  Tensor dense1_bias;    // [8]
  Tensor dense2_weight;  // [1, 8, 1, 1]
  Tensor dense2_bias;    // [1]

 private:
  Tensor pooled_tail(const Tensor& first_conv, bool training);
  Tensor dense_tail(const Tensor& first_conv);
  MiMode mode_ = MiMode::kPooled;
  std::size_t channels_ = 0;
};

struct StreamOptions {
  StreamSet enabled = StreamSet::all();
  MiMode mi_mode = MiMode::kPooled;
  NormGranularity granularity = NormGranularity::kGlobal;
};

// All stream heads of the model.
class StreamHeads {
 public:
  StreamHeads(std::size_t channels, std::size_t map_h, std::size_t map_w, const StreamOptions& options, Rng& rng);

  // support [W,C,h,w] (aggregated), query [n,C,h,w]. Disabled streams yield
  // undefined tensors.
  PerStream<Tensor> score_episode(const Tensor& support, const Tensor& query, bool training);
  // Like score_episode but restricted to `subset` of the enabled streams.
  PerStream<Tensor> score_episode(const Tensor& support, const Tensor& query, bool training,
                                  const StreamSet& subset);

  const StreamOptions& options() const { return options_; }

  void collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers);

  AppearanceHead appearance;
  RelationHead corr_channel;
  RelationHead corr_spatial;
  MutualInfoHead mutual_info;

 private:
  Tensor relation_scores(const Tensor& support, const Tensor& query, CorrKind kind);
  StreamOptions options_;
};

// ---- single-pair scores --------------------------------------------------------------

// ||corr(F_s) - corr(F_q)||_F of the two maps, as a [1] tensor.
Tensor relation_distance(const FeatureMapPair& pair, CorrKind kind,
                         NormGranularity granularity = NormGranularity::kGlobal);
Tensor relation_score(const FeatureMapPair& pair, CorrKind kind, const RelationHead& head,
                      NormGranularity granularity = NormGranularity::kGlobal);
Tensor appearance_score(const FeatureMapPair& pair, AppearanceHead& head, bool training = false);
Tensor mi_score(const Tensor& support_map, const Tensor& query_map, MutualInfoHead& head, bool training = false);

}  // namespace fewshot
