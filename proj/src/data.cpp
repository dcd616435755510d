// SPDX-License-Identifier: Apache-2.0
#include "baim/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace baim {

int FoldSplit::fold_of(std::int64_t learner_id) const {
  auto it = assignments.find(learner_id);
  if (it == assignments.end()) {
    throw ValidationError("learner " + std::to_string(learner_id) +
                          " has no fold assignment");
  }
  return it->second;
}

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

std::int64_t parse_int(const std::string& tok, const std::string& what,
                       int line_no) {
  try {
    size_t pos = 0;
    long long v = std::stoll(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("line " + std::to_string(line_no) +
                          ": cannot parse " + what + " from '" + tok + "'");
  }
}

}  // namespace

std::vector<LearnerSequence> window_sequence(const LearnerSequence& seq,
                                             int max_len) {
  if (max_len < 2) throw ValidationError("max_len must be >= 2");
  std::vector<LearnerSequence> out;
  int n = seq.length();
  for (int start = 0; start < n; start += max_len) {
    LearnerSequence w;
    w.learner_id = seq.learner_id;
    int end = std::min(n, start + max_len);
    for (int i = start; i < end; ++i) {
      Interaction it = seq.interactions[i];
      it.timestep = i - start;
      w.interactions.push_back(it);
    }
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<LearnerSequence> load_sequences(const std::string& path,
                                            int max_len, int item_count) {
  if (max_len < 2) throw ValidationError("max_len must be >= 2");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);

  std::vector<LearnerSequence> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_on(line, ';');
    if (fields.size() != 3) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": expected 3 ';'-separated fields, got " +
                            std::to_string(fields.size()));
    }
    LearnerSequence seq;
    seq.learner_id = parse_int(fields[0], "learner id", line_no);
    auto item_toks = split_on(fields[1], ',');
    auto resp_toks = split_on(fields[2], ',');
    if (item_toks.size() != resp_toks.size() || item_toks.empty()) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": item and response counts differ or are empty");
    }
    for (size_t i = 0; i < item_toks.size(); ++i) {
      Interaction it;
      it.item_id = static_cast<int>(parse_int(item_toks[i], "item id", line_no));
      std::int64_t r = parse_int(resp_toks[i], "response", line_no);
      if (r != 0 && r != 1) {
        throw ValidationError("line " + std::to_string(line_no) +
                              ": response must be 0 or 1, got " +
                              std::to_string(r));
      }
      if (it.item_id < 0 ||
          (item_count >= 0 && it.item_id >= item_count)) {
        throw ValidationError("line " + std::to_string(line_no) +
                              ": item id " + std::to_string(it.item_id) +
                              " outside catalog of size " +
                              std::to_string(item_count));
      }
      it.response = static_cast<int>(r);
      it.timestep = static_cast<int>(i);
      seq.interactions.push_back(it);
    }
    auto windows = window_sequence(seq, max_len);
    out.insert(out.end(), windows.begin(), windows.end());
  }
  return out;
}

void save_sequences(const std::string& path,
                    const std::vector<LearnerSequence>& sequences) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file: " + path);
  for (const auto& seq : sequences) {
    out << seq.learner_id << ';';
    for (int i = 0; i < seq.length(); ++i) {
      if (i) out << ',';
      out << seq.interactions[i].item_id;
    }
    out << ';';
    for (int i = 0; i < seq.length(); ++i) {
      if (i) out << ',';
      out << seq.interactions[i].response;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

FoldSplit make_folds(const std::vector<LearnerSequence>& sequences, int k,
                     std::uint64_t seed) {
  if (k < 1) throw ValidationError("fold count must be positive");
  std::set<std::int64_t> ids;
  for (const auto& s : sequences) ids.insert(s.learner_id);
  if (static_cast<int>(ids.size()) < k) {
    throw ValidationError("fold count " + std::to_string(k) +
                          " exceeds learner count " +
                          std::to_string(ids.size()));
  }
  std::vector<std::int64_t> order(ids.begin(), ids.end());
  std::mt19937_64 engine(seed);
  std::shuffle(order.begin(), order.end(), engine);

  FoldSplit split;
  split.k = k;
  for (size_t i = 0; i < order.size(); ++i) {
    split.assignments[order[i]] = static_cast<int>(i % k);
  }
  return split;
}

ItemCatalog load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open catalog file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ValidationError(std::string("catalog parse error: ") + e.what());
  }
  ItemCatalog cat;
  if (!j.contains("item_count") || !j["item_count"].is_number_integer()) {
    throw ValidationError("catalog missing integer field 'item_count'");
  }
  cat.item_count = j["item_count"].get<int>();
  if (cat.item_count <= 0) throw ValidationError("item_count must be positive");
  if (j.contains("metadata")) {
    for (auto& [key, val] : j["metadata"].items()) {
      cat.metadata[std::stoi(key)] = val.get<std::string>();
    }
  }
  return cat;
}

void save_catalog(const std::string& path, const ItemCatalog& catalog) {
  nlohmann::json j;
  j["item_count"] = catalog.item_count;
  if (!catalog.metadata.empty()) {
    nlohmann::json meta = nlohmann::json::object();
    for (const auto& [id, text] : catalog.metadata) {
      meta[std::to_string(id)] = text;
    }
    j["metadata"] = meta;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write catalog file: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace baim
