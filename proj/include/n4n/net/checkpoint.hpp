#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "n4n/core/error.hpp"
#include "n4n/core/fileio.hpp"
#include "n4n/net/config.hpp"
#include "n4n/nn/tensor.hpp"

namespace n4n::net {

inline constexpr char kCheckpointMagic[8] = {'N', '4', 'N', '\0', 'C', 'K', 'P', 'T'};

struct Blob {
  std::string name;
  nn::Shape shape;
  std::vector<float> data;
};

/// Everything needed to continue a training run where it stopped.
struct TrainState {
  std::size_t epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  double lr = 0;
  double sched_best = std::numeric_limits<double>::infinity();
  std::size_t sched_bad = 0;
  std::uint64_t adam_t = 0;
  std::string rng;  // textual mt19937_64 state
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> train_dice;
};

struct Checkpoint {
  ArchConfig config;
  TrainState state;
  std::vector<Blob> blobs;

  const Blob* find(const std::string& name) const {
    for (const auto& b : blobs)
      if (b.name == name) return &b;
    return nullptr;
  }
  const Blob& at(const std::string& name) const {
    const Blob* b = find(name);
    require(b != nullptr, ErrorCode::ShapeMismatch, "checkpoint has no blob '" + name + "'");
    return *b;
  }
};

namespace detail {

inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double number_or_inf(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

inline nlohmann::json series(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(finite_or_null(x));
  return a;
}

inline std::vector<double> series(const nlohmann::json& j) {
  std::vector<double> v;
  for (const auto& e : j) v.push_back(e.is_null() ? std::numeric_limits<double>::quiet_NaN() : e.get<double>());
  return v;
}

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32le(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  nlohmann::json header;
  header["format"] = 1;
  header["config"] = ck.config;
  const TrainState& s = ck.state;
  header["state"] = {{"epoch", s.epoch},
                     {"best_val_loss", detail::finite_or_null(s.best_val_loss)},
                     {"best_epoch", s.best_epoch},
                     {"lr", s.lr},
                     {"sched_best", detail::finite_or_null(s.sched_best)},
                     {"sched_bad", s.sched_bad},
                     {"adam_t", s.adam_t},
                     {"rng", s.rng},
                     {"train_loss", detail::series(s.train_loss)},
                     {"val_loss", detail::series(s.val_loss)},
                     {"train_dice", detail::series(s.train_dice)}};
  nlohmann::json table = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& b : ck.blobs) {
    require(b.data.size() == nn::shape_size(b.shape), ErrorCode::ShapeMismatch, "blob '" + b.name + "' size mismatch");
    table.push_back({{"name", b.name}, {"dtype", "float32"}, {"shape", b.shape}, {"offset", offset}});
    offset += b.data.size() * 4;
  }
  header["blobs"] = table;
  const std::string text = header.dump();
  require(text.size() <= 0xFFFFFFFFu, ErrorCode::InvalidArgument, "checkpoint header too large");
  std::string out(kCheckpointMagic, 8);
  detail::put_u32le(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& b : ck.blobs)
    for (float f : b.data) detail::put_u32le(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), kCheckpointMagic, 8) == 0, ErrorCode::BadMagic,
          "not a checkpoint file");
  const std::size_t hlen = detail::get_u32le(bytes, 8);
  require(bytes.size() >= 12 + hlen, ErrorCode::TruncatedData, "checkpoint header truncated");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + std::ptrdiff_t(hlen));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  const std::size_t data0 = 12 + hlen;
  try {
    ck.config = h.at("config").get<ArchConfig>();
    const auto& s = h.at("state");
    ck.state.epoch = s.at("epoch").get<std::size_t>();
    ck.state.best_val_loss = detail::number_or_inf(s.at("best_val_loss"));
    ck.state.best_epoch = s.at("best_epoch").get<std::size_t>();
    ck.state.lr = s.at("lr").get<double>();
    ck.state.sched_best = detail::number_or_inf(s.at("sched_best"));
    ck.state.sched_bad = s.at("sched_bad").get<std::size_t>();
    ck.state.adam_t = s.at("adam_t").get<std::uint64_t>();
    ck.state.rng = s.at("rng").get<std::string>();
    ck.state.train_loss = detail::series(s.at("train_loss"));
    ck.state.val_loss = detail::series(s.at("val_loss"));
    ck.state.train_dice = detail::series(s.at("train_dice"));
    for (const auto& e : h.at("blobs")) {
      require(e.at("dtype").get<std::string>() == "float32", ErrorCode::UnsupportedDtype,
              "checkpoint blob dtype must be float32");
      Blob b{e.at("name").get<std::string>(), e.at("shape").get<nn::Shape>(), {}};
      const std::size_t off = e.at("offset").get<std::size_t>();
      const std::size_t n = nn::shape_size(b.shape);
      require(data0 + off + 4 * n <= bytes.size(), ErrorCode::TruncatedData, "checkpoint blob '" + b.name + "' truncated");
      b.data.resize(n);
      for (std::size_t i = 0; i < n; ++i) b.data[i] = std::bit_cast<float>(detail::get_u32le(bytes, data0 + off + 4 * i));
      ck.blobs.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("checkpoint header: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_file_atomic(path, encode_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

template <class S>
Blob to_blob(const std::string& name, const nn::NdTensor<S>& t) {
  return {name, t.shape(), std::vector<float>(t.values().begin(), t.values().end())};
}

template <class S>
void from_blob(const Blob& b, nn::NdTensor<S>& t) {
  require(b.shape == t.shape(), ErrorCode::ShapeMismatch,
          "blob '" + b.name + "' has shape " + nn::shape_str(b.shape) + ", expected " + nn::shape_str(t.shape()));
  std::copy(b.data.begin(), b.data.end(), t.values().begin());
}

}  // namespace n4n::net
