#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "zeroavsr/autograd.hpp"
#include "zeroavsr/common.hpp"
#include "zeroavsr/mat.hpp"

namespace zeroavsr::ckpt {

using json = nlohmann::json;

// Self-describing checkpoint container:
//   "ZAVC" | u32 format version | u64 header length | header JSON | blobs
// The header carries the kind, free-form metadata (model config, alphabet,
// RNG state) and a tensor index; blobs are row-major little-endian float32
// in index order. Round-trips are bit-exact.
inline constexpr uint32_t kFormatVersion = 1;

struct Checkpoint {
  std::string kind;
  json meta;
  std::vector<std::pair<std::string, Mat<float>>> tensors;

  const Mat<float>& tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw Error("checkpoint has no tensor named " + name);
  }
  bool has_tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return true;
    return false;
  }
};

inline void save(const std::filesystem::path& path, const std::string& kind, const json& meta,
                 const std::vector<std::pair<std::string, const Mat<float>*>>& tensors) {
  json header;
  header["format_version"] = kFormatVersion;
  header["kind"] = kind;
  header["meta"] = meta;
  json index = json::array();
  for (const auto& [name, m] : tensors)
    index.push_back(json{{"name", name}, {"rows", m->rows}, {"cols", m->cols}});
  header["tensors"] = index;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  out.write("ZAVC", 4);
  const uint32_t ver = kFormatVersion;
  out.write(reinterpret_cast<const char*>(&ver), 4);
  const uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& [name, m] : tensors)
    out.write(reinterpret_cast<const char*>(m->v.data()), std::streamsize(m->v.size() * 4));
  if (!out) throw Error("short write on checkpoint: " + path.string());
}

inline Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (std::string(magic, 4) != "ZAVC") throw Error("not a checkpoint file: " + path.string());
  uint32_t ver = 0;
  in.read(reinterpret_cast<char*>(&ver), 4);
  if (ver != kFormatVersion)
    throw Error("unsupported checkpoint version " + std::to_string(ver));
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  in.read(hs.data(), std::streamsize(hlen));
  if (!in) throw Error("truncated checkpoint header: " + path.string());
  json header = json::parse(hs);

  Checkpoint c;
  c.kind = header.at("kind").get<std::string>();
  c.meta = header.at("meta");
  for (const auto& t : header.at("tensors")) {
    Mat<float> m(t.at("rows").get<int>(), t.at("cols").get<int>());
    in.read(reinterpret_cast<char*>(m.v.data()), std::streamsize(m.v.size() * 4));
    if (!in) throw Error("truncated checkpoint tensor: " + path.string());
    c.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  return c;
}

// Parameter <-> tensor-list plumbing; optimizer moments ride along under
// reserved suffixes so training state restores exactly.
inline void add_params(std::vector<std::pair<std::string, const Mat<float>*>>& out,
                       const std::vector<nn::Param<float>*>& params, bool with_moments = false) {
  for (const auto* p : params) {
    out.emplace_back(p->name, &p->w);
    if (with_moments && !p->m.v.empty()) {
      out.emplace_back(p->name + ".__m", &p->m);
      out.emplace_back(p->name + ".__v", &p->v2);
    }
  }
}

inline void restore_params(const Checkpoint& c, const std::vector<nn::Param<float>*>& params,
                           bool with_moments = false) {
  for (auto* p : params) {
    const Mat<float>& w = c.tensor(p->name);
    if (w.rows != p->w.rows || w.cols != p->w.cols)
      throw Error("checkpoint tensor shape mismatch for " + p->name);
    p->w = w;
    p->g = Mat<float>(w.rows, w.cols);
    if (with_moments && c.has_tensor(p->name + ".__m")) {
      p->m = c.tensor(p->name + ".__m");
      p->v2 = c.tensor(p->name + ".__v");
    }
  }
}

}  // namespace zeroavsr::ckpt
