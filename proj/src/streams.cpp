#include "fewshot/streams.hpp"

#include <atomic>
#include <sstream>

#include "fewshot/error.hpp"

namespace fewshot {

namespace {

constexpr Real kVarianceEps = 1e-12;
constexpr Real kNormEps = 1e-12;
constexpr std::size_t kHiddenUnits = 8;

std::atomic<std::uint64_t> g_degenerate_maps{0};

// Pair p = j * ways + c compares query j with class c.
void pair_indices(std::size_t queries, std::size_t ways, std::vector<std::size_t>& query_idx,
                  std::vector<std::size_t>& class_idx) {
  query_idx.resize(queries * ways);
  class_idx.resize(queries * ways);
  for (std::size_t j = 0; j < queries; ++j)
    for (std::size_t c = 0; c < ways; ++c) {
      query_idx[j * ways + c] = j;
      class_idx[j * ways + c] = c;
    }
}

void require_maps(const Tensor& support, const Tensor& query) {
  if (support.ndim() != 4 || query.ndim() != 4 ||
      !std::equal(support.shape().begin() + 1, support.shape().end(), query.shape().begin() + 1)) {
    throw DimensionError("support " + shape_str(support.shape()) + " and query " +
                         shape_str(query.shape()) + " maps differ");
  }
}

// Adds the split first-layer responses of every (query, class) pair.
Tensor pair_sum(const Tensor& query_part, const Tensor& class_part) {
  std::vector<std::size_t> qi;
  std::vector<std::size_t> ci;
  pair_indices(query_part.dim(0), class_part.dim(0), qi, ci);
  return add(index_select(query_part, qi), index_select(class_part, ci));
}

}  // namespace

std::string_view stream_name(Stream s) {
  switch (s) {
    case Stream::kAppearance: return "appearance";
    case Stream::kCorrChannel: return "corr_channel";
    case Stream::kCorrSpatial: return "corr_spatial";
    case Stream::kMutualInfo: return "mi";
  }
  return "?";
}

std::string_view stream_tag(Stream s) {
  switch (s) {
    case Stream::kAppearance: return "a";
    case Stream::kCorrChannel: return "corrC";
    case Stream::kCorrSpatial: return "corrD";
    case Stream::kMutualInfo: return "MI";
  }
  return "?";
}

std::optional<Stream> parse_stream(std::string_view name) {
  for (Stream s : kAllStreams) {
    if (name == stream_name(s) || name == stream_tag(s)) return s;
  }
  return std::nullopt;
}

StreamSet::StreamSet(std::initializer_list<Stream> streams) {
  for (Stream s : streams) set(s, true);
}

StreamSet StreamSet::parse(std::string_view text) {
  if (text == "all") return all();
  StreamSet set;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view item = text.substr(start, end - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) {
      auto s = parse_stream(item);
      if (!s) throw ConfigError("unknown stream '" + std::string(item) + "'");
      set.set(*s, true);
    }
    start = end + 1;
  }
  return set;
}

std::size_t StreamSet::count() const {
  std::size_t n = 0;
  for (bool b : on_) n += b ? 1 : 0;
  return n;
}

std::string StreamSet::str() const {
  std::string out;
  for (Stream s : kAllStreams) {
    if (!contains(s)) continue;
    if (!out.empty()) out += ',';
    out += stream_name(s);
  }
  return out;
}

// ---- correlation statistics ---------------------------------------------------------

Tensor normalize_map(const Tensor& features, NormGranularity granularity) {
  if (features.ndim() != 2 && features.ndim() != 3) {
    throw DimensionError("normalize_map expects [C,D] or [N,C,D], got " + shape_str(features.shape()));
  }
  const bool single = features.ndim() == 2;
  const Tensor x = single ? reshape(features, {1, features.dim(0), features.dim(1)}) : features;
  const std::size_t n = x.dim(0);
  const std::size_t c = x.dim(1);
  const std::size_t d = x.dim(2);
  if (c * d < 2) throw ContractError("normalize_map needs at least two elements");

  Tensor z;
  Tensor var;
  if (granularity == NormGranularity::kGlobal) {
    const Tensor flat = reshape(x, {n, c * d});
    const Tensor centered = sub(flat, mean(flat, 1, true));
    var = mean(square(centered), 1, true);
    z = div(centered, sqrt(add_scalar(var, kVarianceEps)));
  } else {
    const Tensor centered = sub(x, mean(x, 2, true));
    var = mean(square(centered), 2, true);
    z = reshape(div(centered, sqrt(add_scalar(var, kVarianceEps))), {n, c * d});
  }
  for (Real v : var.data()) {
    if (v <= kVarianceEps) g_degenerate_maps.fetch_add(1, std::memory_order_relaxed);
  }
  const Tensor norm = reshape(add_scalar(frobenius_norm_per_sample(z), kNormEps), {n, 1});
  const Tensor out = div(z, norm);
  return single ? reshape(out, {c, d}) : reshape(out, {n, c, d});
}

std::uint64_t normalize_degenerate_count() { return g_degenerate_maps.load(std::memory_order_relaxed); }

Tensor corr_spatial(const Tensor& normalized) {
  if (normalized.ndim() == 2) {
    return reshape(corr_spatial(reshape(normalized, {1, normalized.dim(0), normalized.dim(1)})),
                   {normalized.dim(1), normalized.dim(1)});
  }
  return bmm(normalized, normalized, /*transpose_a=*/true, /*transpose_b=*/false);
}

Tensor corr_channel(const Tensor& normalized) {
  if (normalized.ndim() == 2) {
    return reshape(corr_channel(reshape(normalized, {1, normalized.dim(0), normalized.dim(1)})),
                   {normalized.dim(0), normalized.dim(0)});
  }
  return bmm(normalized, normalized, /*transpose_a=*/false, /*transpose_b=*/true);
}

Tensor correlation(const Tensor& normalized, CorrKind kind) {
  return kind == CorrKind::kSpatial ? corr_spatial(normalized) : corr_channel(normalized);
}

// ---- relation -----------------------------------------------------------------------------

RelationHead::RelationHead() {
  // Neutral start: every distance scores 0.5 until the head has learned which
  // direction means "same class". (Distances between correlation matrices of
  // random features are already informative, so a w < 0 start would make an
  // untrained model score above chance.)
  weight = Tensor::zeros({1}, true);
  bias = Tensor::zeros({1}, true);
}

Tensor RelationHead::score(const Tensor& distance) const {
  return sigmoid(add(mul(distance, weight), bias));
}

void RelationHead::collect(const std::string& prefix, std::vector<NamedTensor>& params) {
  params.push_back({prefix + ".weight", weight});
  params.push_back({prefix + ".bias", bias});
}

Tensor relation_distance(const FeatureMapPair& pair, CorrKind kind, NormGranularity granularity) {
  require_maps(reshape(pair.support, {1, pair.support.dim(0), pair.support.dim(1), pair.support.dim(2)}),
               reshape(pair.query, {1, pair.query.dim(0), pair.query.dim(1), pair.query.dim(2)}));
  const std::size_t c = pair.support.dim(0);
  const std::size_t d = pair.support.dim(1) * pair.support.dim(2);
  const Tensor cs = correlation(normalize_map(reshape(pair.support, {c, d}), granularity), kind);
  const Tensor cq = correlation(normalize_map(reshape(pair.query, {c, d}), granularity), kind);
  return frobenius_norm(sub(cs, cq));
}

Tensor relation_score(const FeatureMapPair& pair, CorrKind kind, const RelationHead& head,
                      NormGranularity granularity) {
  return head.score(relation_distance(pair, kind, granularity));
}

// ---- appearance --------------------------------------------------------------------------

AppearanceHead::AppearanceHead(std::size_t channels, std::size_t map_h, std::size_t map_w, Rng& rng)
    : channels_(channels) {
  const std::size_t h2 = map_h / 4;
  const std::size_t w2 = map_w / 4;
  if (h2 == 0 || w2 == 0) {
    throw ConfigError("feature map " + std::to_string(map_h) + "x" + std::to_string(map_w) +
                      " is too small for the appearance stream's two poolings");
  }
  block1 = ConvBlock(2 * channels, channels, true, rng);
  block2 = ConvBlock(channels, channels, true, rng);
  fc1 = Linear(channels * (map_h / 2 / 2) * (map_w / 2 / 2), kHiddenUnits, rng);
  fc2 = Linear(kHiddenUnits, 1, rng);
}

Tensor AppearanceHead::tail(const Tensor& first_conv, bool training) {
  Tensor h = block2.forward(block1.finish(first_conv, training), training);
  h = reshape(h, {h.dim(0), h.numel() / h.dim(0)});
  h = fc2.forward(relu(fc1.forward(h)));
  return reshape(sigmoid(h), {h.dim(0)});
}

Tensor AppearanceHead::score_pairs(const Tensor& pair_maps, bool training) {
  if (pair_maps.ndim() != 4 || pair_maps.dim(1) != 2 * channels_) {
    throw DimensionError("appearance pair maps " + shape_str(pair_maps.shape()));
  }
  return tail(conv2d(pair_maps, block1.weight, block1.bias, 1), training);
}

Tensor AppearanceHead::score_episode(const Tensor& support, const Tensor& query, bool training) {
  require_maps(support, query);
  const Tensor ws = narrow(block1.weight, 1, 0, channels_);
  const Tensor wq = narrow(block1.weight, 1, channels_, channels_);
  const Tensor cs = conv2d(support, ws, Tensor{}, 1);
  const Tensor cq = conv2d(query, wq, block1.bias, 1);
  return reshape(tail(pair_sum(cq, cs), training), {query.dim(0), support.dim(0)});
}

void AppearanceHead::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                             std::vector<NamedTensor>& buffers) {
  block1.collect(prefix + ".block1", params, buffers);
  block2.collect(prefix + ".block2", params, buffers);
  fc1.collect(prefix + ".fc1", params);
  fc2.collect(prefix + ".fc2", params);
}

Tensor appearance_score(const FeatureMapPair& pair, AppearanceHead& head, bool training) {
  const Shape one{1, pair.support.dim(0), pair.support.dim(1), pair.support.dim(2)};
  const std::array<Tensor, 2> parts{reshape(pair.support, one), reshape(pair.query, one)};
  require_maps(parts[0], parts[1]);
  return head.score_pairs(concat(parts, 1), training);
}

// ---- mutual information ------------------------------------------------------------------

MutualInfoHead::MutualInfoHead(std::size_t channels, std::size_t map_h, std::size_t map_w, MiMode mode,
                               Rng& rng)
    : mode_(mode), channels_(channels) {
  if (mode == MiMode::kPooled) {
    if (map_h < 2 || map_w < 2) {
      throw ConfigError("feature map " + std::to_string(map_h) + "x" + std::to_string(map_w) +
                        " is too small for the mutual-information sub-network");
    }
    const bool second_pool = map_h >= 8 && map_w >= 8;
    const std::size_t h2 = second_pool ? map_h / 2 / 2 : map_h / 2;
    const std::size_t w2 = second_pool ? map_w / 2 / 2 : map_w / 2;
    block1 = ConvBlock(2 * channels, channels, true, rng);
    block2 = ConvBlock(channels, channels, second_pool, rng);
    fc1 = Linear(channels * h2 * w2, kHiddenUnits, rng);
    fc2 = Linear(kHiddenUnits, 1, rng);
  } else {
    dense1_weight = kaiming_normal({kHiddenUnits, 2 * channels, 1, 1}, 2 * channels, rng);
    dense1_bias = Tensor::zeros({kHiddenUnits}, true);
    dense2_weight = kaiming_normal({1, kHiddenUnits, 1, 1}, kHiddenUnits, rng);
    dense2_bias = Tensor::zeros({1}, true);
  }
}

Tensor MutualInfoHead::pooled_tail(const Tensor& first_conv, bool training) {
  Tensor h = block2.forward(block1.finish(first_conv, training), training);
  h = reshape(h, {h.dim(0), h.numel() / h.dim(0)});
  h = fc2.forward(relu(fc1.forward(h)));
  return reshape(sigmoid(h), {h.dim(0)});
}

Tensor MutualInfoHead::dense_tail(const Tensor& first_conv) {
  const Tensor logits = conv2d(relu(first_conv), dense2_weight, dense2_bias, 0);
  const std::size_t p = logits.dim(0);
  const std::size_t hw = logits.dim(2) * logits.dim(3);
  return reshape(sigmoid(logits), {p, hw});
}

Tensor MutualInfoHead::score_pairs(const Tensor& global, const Tensor& query_maps, bool training) {
  if (global.ndim() != 2 || query_maps.ndim() != 4 || global.dim(0) != query_maps.dim(0) ||
      global.dim(1) != channels_ || query_maps.dim(1) != channels_) {
    throw DimensionError("mi pairs " + shape_str(global.shape()) + " / " + shape_str(query_maps.shape()));
  }
  const std::array<Tensor, 2> parts{tile_spatial(global, query_maps.dim(2), query_maps.dim(3)), query_maps};
  const Tensor maps = concat(parts, 1);
  if (mode_ == MiMode::kPooled) return pooled_tail(conv2d(maps, block1.weight, block1.bias, 1), training);
  return mean(dense_tail(conv2d(maps, dense1_weight, dense1_bias, 0)), 1);
}

Tensor MutualInfoHead::dense_location_scores(const Tensor& global, const Tensor& query_maps) {
  if (mode_ != MiMode::kDense) throw ContractError("dense_location_scores on a pooled head");
  const std::array<Tensor, 2> parts{tile_spatial(global, query_maps.dim(2), query_maps.dim(3)), query_maps};
  return dense_tail(conv2d(concat(parts, 1), dense1_weight, dense1_bias, 0));
}

Tensor MutualInfoHead::score_episode(const Tensor& support, const Tensor& query, bool training) {
  require_maps(support, query);
  const Tensor tiles = tile_spatial(global_max_pool(support), support.dim(2), support.dim(3));
  const bool pooled = mode_ == MiMode::kPooled;
  const Tensor& w = pooled ? block1.weight : dense1_weight;
  const Tensor& b = pooled ? block1.bias : dense1_bias;
  const std::size_t pad = pooled ? 1 : 0;
  const Tensor ce = conv2d(tiles, narrow(w, 1, 0, channels_), Tensor{}, pad);
  const Tensor cq = conv2d(query, narrow(w, 1, channels_, channels_), b, pad);
  const Tensor pairs = pair_sum(cq, ce);
  const Tensor scores = pooled ? pooled_tail(pairs, training) : mean(dense_tail(pairs), 1);
  return reshape(scores, {query.dim(0), support.dim(0)});
}

void MutualInfoHead::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                             std::vector<NamedTensor>& buffers) {
  if (mode_ == MiMode::kPooled) {
    block1.collect(prefix + ".block1", params, buffers);
    block2.collect(prefix + ".block2", params, buffers);
    fc1.collect(prefix + ".fc1", params);
    fc2.collect(prefix + ".fc2", params);
  } else {
    params.push_back({prefix + ".dense1.weight", dense1_weight});
    params.push_back({prefix + ".dense1.bias", dense1_bias});
    params.push_back({prefix + ".dense2.weight", dense2_weight});
    params.push_back({prefix + ".dense2.bias", dense2_bias});
  }
}

Tensor mi_score(const Tensor& support_map, const Tensor& query_map, MutualInfoHead& head, bool training) {
  const Shape one{1, support_map.dim(0), support_map.dim(1), support_map.dim(2)};
  const Tensor s = reshape(support_map, one);
  const Tensor q = reshape(query_map, one);
  require_maps(s, q);
  return head.score_pairs(global_max_pool(s), q, training);
}

// ---- all streams --------------------------------------------------------------------------

StreamHeads::StreamHeads(std::size_t channels, std::size_t map_h, std::size_t map_w,
                         const StreamOptions& options, Rng& rng)
    : options_(options) {
  if (options.enabled.empty()) throw ConfigError("no stream enabled");
  // Every head is built regardless of the enabled set, so parameter
  // initialisation does not depend on which streams are switched on.
  appearance = AppearanceHead(channels, map_h, map_w, rng);
  mutual_info = MutualInfoHead(channels, map_h, map_w, options.mi_mode, rng);
}

Tensor StreamHeads::relation_scores(const Tensor& support, const Tensor& query, CorrKind kind) {
  require_maps(support, query);
  const std::size_t c = support.dim(1);
  const std::size_t d = support.dim(2) * support.dim(3);
  const Tensor cs = correlation(normalize_map(reshape(support, {support.dim(0), c, d}), options_.granularity), kind);
  const Tensor cq = correlation(normalize_map(reshape(query, {query.dim(0), c, d}), options_.granularity), kind);
  const RelationHead& head = kind == CorrKind::kSpatial ? corr_spatial : corr_channel;
  return head.score(pairwise_distance(cq, cs));
}

PerStream<Tensor> StreamHeads::score_episode(const Tensor& support, const Tensor& query, bool training) {
  return score_episode(support, query, training, options_.enabled);
}

PerStream<Tensor> StreamHeads::score_episode(const Tensor& support, const Tensor& query, bool training,
                                             const StreamSet& subset) {
  PerStream<Tensor> out;
  auto wanted = [&](Stream s) { return options_.enabled.contains(s) && subset.contains(s); };
  if (wanted(Stream::kAppearance))
    out[index_of(Stream::kAppearance)] = appearance.score_episode(support, query, training);
  if (wanted(Stream::kCorrChannel))
    out[index_of(Stream::kCorrChannel)] = relation_scores(support, query, CorrKind::kChannel);
  if (wanted(Stream::kCorrSpatial))
    out[index_of(Stream::kCorrSpatial)] = relation_scores(support, query, CorrKind::kSpatial);
  if (wanted(Stream::kMutualInfo))
    out[index_of(Stream::kMutualInfo)] = mutual_info.score_episode(support, query, training);
  return out;
}

void StreamHeads::collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers) {
  appearance.collect("appearance", params, buffers);
  corr_channel.collect("corr_channel", params);
  corr_spatial.collect("corr_spatial", params);
  mutual_info.collect("mi", params, buffers);
}

}  // namespace fewshot
