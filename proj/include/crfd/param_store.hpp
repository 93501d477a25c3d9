#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "crfd/tensor.hpp"

namespace crfd {

/// Named learnable tensors with deterministic (lexicographic) iteration.
/// Every entry has requires_grad set.
class ParamStore {
 public:
  void add(const std::string& name, Tensor t);
  /// Replaces an existing entry (optimizer step); shape must match.
  void set(const std::string& name, Tensor t);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  size_t size() const { return entries_.size(); }
  std::int64_t total_scalars() const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  bool operator==(const ParamStore& other) const;

  /// Serializes as a text manifest (name, dtype, dims, byte offset per line)
  /// followed by a raw little-endian blob. Round-trips bit-exactly.
  void save(std::ostream& os) const;
  static ParamStore load(std::istream& is);

  void save_file(const std::string& path) const;
  static ParamStore load_file(const std::string& path);

 private:
  std::map<std::string, Tensor> entries_;
};

inline constexpr char kParamStoreMagic[] = "CRFD1\n";

}  // namespace crfd
