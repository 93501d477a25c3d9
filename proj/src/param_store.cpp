#include "crfd/param_store.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace crfd {

void ParamStore::add(const std::string& name, Tensor t) {
  if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
    throw std::invalid_argument("parameter name '" + name + "' must be non-empty without whitespace");
  if (entries_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  if (!t.requires_grad())
    t = Tensor::from(t.shape(), t.values(), /*requires_grad=*/true);
  entries_.emplace(name, std::move(t));
}

void ParamStore::set(const std::string& name, Tensor t) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
  if (it->second.shape() != t.shape())
    throw std::invalid_argument("parameter '" + name + "' shape changed from " +
                                shape_str(it->second.shape()) + " to " + shape_str(t.shape()));
  if (!t.requires_grad()) t = Tensor::from(t.shape(), t.values(), /*requires_grad=*/true);
  it->second = std::move(t);
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
  return it->second;
}

std::int64_t ParamStore::total_scalars() const {
  std::int64_t n = 0;
  for (const auto& [k, v] : entries_) n += v.size();
  return n;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto a = entries_.begin();
  auto b = other.entries_.begin();
  for (; a != entries_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.shape() != b->second.shape()) return false;
    if (std::memcmp(a->second.data(), b->second.data(),
                    static_cast<size_t>(a->second.size()) * sizeof(double)) != 0)
      return false;
  }
  return true;
}

void ParamStore::save(std::ostream& os) const {
  os << kParamStoreMagic;
  std::int64_t offset = 0;
  for (const auto& [name, t] : entries_) {
    os << name << " f64";
    for (int d : t.shape()) os << " " << d;
    os << " " << offset << "\n";
    offset += t.size() * static_cast<std::int64_t>(sizeof(double));
  }
  os << "blob " << offset << "\n";
  for (const auto& [name, t] : entries_)
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!os) throw std::runtime_error("ParamStore write failed");
}

ParamStore ParamStore::load(std::istream& is) {
  std::string magic(6, '\0');
  is.read(magic.data(), 6);
  if (!is || magic != kParamStoreMagic)
    throw std::runtime_error("ParamStore: bad magic (expected CRFD1)");
  struct Entry {
    std::string name;
    Shape shape;
    std::int64_t offset;
  };
  std::vector<Entry> entries;
  std::int64_t blob_bytes = -1;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string first;
    ls >> first;
    if (first == "blob") {
      if (!(ls >> blob_bytes)) throw std::runtime_error("ParamStore: malformed blob line");
      break;
    }
    std::string dtype;
    if (!(ls >> dtype) || dtype != "f64")
      throw std::runtime_error("ParamStore: malformed manifest line '" + line + "'");
    std::vector<std::int64_t> nums;
    std::int64_t v;
    while (ls >> v) nums.push_back(v);
    if (nums.empty()) throw std::runtime_error("ParamStore: manifest line missing offset: '" + line + "'");
    Entry e;
    e.name = first;
    e.offset = nums.back();
    for (size_t i = 0; i + 1 < nums.size(); ++i) e.shape.push_back(static_cast<int>(nums[i]));
    entries.push_back(std::move(e));
  }
  if (blob_bytes < 0) throw std::runtime_error("ParamStore: missing blob section");
  std::vector<char> blob(static_cast<size_t>(blob_bytes));
  is.read(blob.data(), blob_bytes);
  if (is.gcount() != blob_bytes) throw std::runtime_error("ParamStore: truncated blob");
  ParamStore ps;
  for (const auto& e : entries) {
    std::int64_t n = shape_numel(e.shape);
    if (e.offset < 0 || e.offset + n * static_cast<std::int64_t>(sizeof(double)) > blob_bytes)
      throw std::runtime_error("ParamStore: tensor '" + e.name + "' offset out of range");
    std::vector<double> vals(static_cast<size_t>(n));
    std::memcpy(vals.data(), blob.data() + e.offset, static_cast<size_t>(n) * sizeof(double));
    ps.add(e.name, Tensor::from(e.shape, std::move(vals), /*requires_grad=*/true));
  }
  return ps;
}

void ParamStore::save_file(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  save(f);
}

ParamStore ParamStore::load_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  return load(f);
}

}  // namespace crfd
