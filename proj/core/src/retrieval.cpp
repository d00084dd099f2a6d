#include "ftr/retrieval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "format.hpp"
#include "ftr/error.hpp"
#include "rng.hpp"

namespace ftr {

EmbeddingTable::EmbeddingTable(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw Error(ErrorCode::MalformedRecord, "embedding dim must be positive");
}

void EmbeddingTable::add(std::string id, std::vector<double> vec) {
  if (vec.size() != dim_) {
    throw Error(ErrorCode::MalformedRecord, id + ": vector has " + std::to_string(vec.size()) +
                                                " values, header says " + std::to_string(dim_));
  }
  bool nonzero = false;
  for (double v : vec) {
    if (!std::isfinite(v)) throw Error(ErrorCode::MalformedRecord, id + ": non-finite value");
    nonzero = nonzero || v != 0.0;
  }
  if (!nonzero) throw Error(ErrorCode::MalformedRecord, id + ": zero vector");
  if (!vectors_.emplace(id, std::move(vec)).second) {
    throw Error(ErrorCode::MalformedRecord, id + ": repeated sentence_id");
  }
}

const std::vector<double>* EmbeddingTable::find(std::string_view id) const {
  auto it = vectors_.find(id);
  return it == vectors_.end() ? nullptr : &it->second;
}

EmbeddingTable read_embeddings(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MalformedRecord, "empty embedding file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("dim=", 0) != 0) throw Error(ErrorCode::MalformedRecord, "line 1: expected 'dim=<d>'");
  std::size_t dim = 0;
  {
    const char* b = line.data() + 4;
    const char* e = line.data() + line.size();
    auto [ptr, ec] = std::from_chars(b, e, dim);
    if (ec != std::errc() || ptr != e || dim == 0) {
      throw Error(ErrorCode::MalformedRecord, "line 1: bad dimension '" + line.substr(4) + "'");
    }
  }
  EmbeddingTable table(dim);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) throw Error(ErrorCode::MalformedRecord, where + "expected id<TAB>values");
    std::vector<double> vec;
    vec.reserve(dim);
    const char* p = line.data() + tab + 1;
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(p, end, v);
      if (ec != std::errc() || (ptr != end && *ptr != ' ')) {
        throw Error(ErrorCode::MalformedRecord, where + "bad number");
      }
      vec.push_back(v);
      p = ptr;
    }
    try {
      table.add(line.substr(0, tab), std::move(vec));
    } catch (const Error& e) {
      throw Error(e.code(), where + e.what());
    }
  }
  return table;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open embeddings " + path.string());
  return read_embeddings(in);
}

void write_embeddings(std::ostream& out, const EmbeddingTable& table) {
  out << "dim=" << table.dim() << '\n';
  for (const auto& [id, vec] : table.vectors()) {
    out << id << '\t';
    for (std::size_t i = 0; i < vec.size(); ++i) {
      if (i) out << ' ';
      out << detail::format_double(vec[i]);
    }
    out << '\n';
  }
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<std::string> select_random(const Dataset& pool, std::size_t k, std::uint64_t seed) {
  if (k > pool.size()) {
    throw Error(ErrorCode::PoolTooSmall, "asked for " + std::to_string(k) + " demos from a pool of " +
                                             std::to_string(pool.size()));
  }
  std::vector<std::string> ids;
  ids.reserve(pool.size());
  for (const auto& s : pool.sentences()) ids.push_back(s.sentence_id);
  detail::Rng rng(seed);
  // Partial Fisher-Yates: the first k slots are the sample.
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(ids[i], ids[i + detail::uniform_index(rng, ids.size() - i)]);
  }
  ids.resize(k);
  return ids;
}

std::vector<std::string> select_by_embedding(const Dataset& pool, std::string_view test_id,
                                             const EmbeddingTable& emb, std::size_t k) {
  const auto* query = emb.find(test_id);
  if (query == nullptr) throw Error(ErrorCode::MissingEmbedding, "no vector for '" + std::string(test_id) + "'");

  std::vector<std::pair<double, const std::string*>> scored;
  scored.reserve(pool.size());
  for (const auto& s : pool.sentences()) {
    if (s.sentence_id == test_id) continue;
    const auto* v = emb.find(s.sentence_id);
    if (v == nullptr) throw Error(ErrorCode::MissingEmbedding, "no vector for '" + s.sentence_id + "'");
    scored.emplace_back(cosine(*query, *v), &s.sentence_id);
  }
  if (k > scored.size()) {
    throw Error(ErrorCode::PoolTooSmall, "asked for " + std::to_string(k) + " demos from a pool of " +
                                             std::to_string(scored.size()));
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return *a.second < *b.second;
                    });
  std::vector<std::string> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(*scored[i].second);
  return out;
}

}  // namespace ftr
