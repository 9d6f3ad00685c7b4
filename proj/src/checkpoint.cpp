// SPDX-License-Identifier: Apache-2.0
#include "lwlm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "lwlm/fsutil.hpp"

namespace lwlm::ckpt {

using nlohmann::json;

void save(const std::filesystem::path& path, const json& meta, const VisitAll& weights) {
  json header = meta;
  json directory = json::array();
  std::string blob;
  weights([&](const std::string& name, nn::Parameter& p) {
    directory.push_back({{"name", name},
                         {"rows", p.value.rows()},
                         {"cols", p.value.cols()}});
    for (Eigen::Index i = 0; i < p.value.rows(); ++i)
      for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
        char buf[8];
        const double v = p.value(i, j);
        std::memcpy(buf, &v, 8);
        blob.append(buf, 8);
      }
  });
  header["tensors"] = std::move(directory);
  const std::string header_str = header.dump();

  std::string bytes;
  bytes.reserve(16 + header_str.size() + blob.size());
  bytes.append(kMagic, 8);
  const std::uint64_t len = header_str.size();
  char lenbuf[8];
  std::memcpy(lenbuf, &len, 8);
  bytes.append(lenbuf, 8);
  bytes += header_str;
  bytes += blob;
  fsutil::atomic_write(path, bytes);
}

namespace {
json read_header(const std::string& bytes, std::size_t& data_offset) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  if (bytes.size() < 16 + len) throw std::runtime_error("checkpoint: truncated header");
  data_offset = 16 + len;
  return json::parse(bytes.substr(16, len));
}
}  // namespace

Loaded load(const std::filesystem::path& path) {
  const std::string bytes = fsutil::read_file(path);
  std::size_t offset = 0;
  Loaded out;
  out.meta = read_header(bytes, offset);
  for (const auto& entry : out.meta.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const Eigen::Index rows = entry.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = entry.at("cols").get<Eigen::Index>();
    nn::Matrix m(rows, cols);
    const std::size_t need = static_cast<std::size_t>(rows) * cols * 8;
    if (offset + need > bytes.size()) throw std::runtime_error("checkpoint: truncated data");
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        double v;
        std::memcpy(&v, bytes.data() + offset, 8);
        offset += 8;
        m(i, j) = v;
      }
    out.tensors.emplace(name, std::move(m));
  }
  return out;
}

json peek_meta(const std::filesystem::path& path) {
  const std::string bytes = fsutil::read_file(path);
  std::size_t offset = 0;
  return read_header(bytes, offset);
}

void assign(const Loaded& loaded, const VisitAll& weights) {
  weights([&](const std::string& name, nn::Parameter& p) {
    auto it = loaded.tensors.find(name);
    if (it == loaded.tensors.end())
      throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    p.value = it->second;
    p.grad.setZero(p.value.rows(), p.value.cols());
    p.adam_m.setZero(p.value.rows(), p.value.cols());
    p.adam_v.setZero(p.value.rows(), p.value.cols());
  });
}

}  // namespace lwlm::ckpt
