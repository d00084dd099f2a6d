#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ftr/corpus.hpp"

namespace ftr {

// Sentence vectors keyed by sentence_id. Wire format:
//   dim=<d>
//   <sentence_id>\t<f1> <f2> ... <fd>
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return vectors_.size(); }

  // Throws MalformedRecord on a length mismatch, zero vector or repeated id.
  void add(std::string id, std::vector<double> vec);
  const std::vector<double>* find(std::string_view id) const;
  const std::map<std::string, std::vector<double>, std::less<>>& vectors() const noexcept {
    return vectors_;
  }

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<double>, std::less<>> vectors_;
};

EmbeddingTable read_embeddings(std::istream& in);
EmbeddingTable load_embeddings(const std::filesystem::path& path);
void write_embeddings(std::ostream& out, const EmbeddingTable& table);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

// Seeded uniform sample of k pool sentences without replacement.
std::vector<std::string> select_random(const Dataset& pool, std::size_t k, std::uint64_t seed);

// Top-k pool sentences by cosine similarity to test_id, most similar first.
// Ties go to the smaller sentence_id; test_id never selects itself.
std::vector<std::string> select_by_embedding(const Dataset& pool, std::string_view test_id,
                                             const EmbeddingTable& emb, std::size_t k);

}  // namespace ftr
