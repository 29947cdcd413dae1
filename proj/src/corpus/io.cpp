#include "rtd/corpus/io.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rtd/common/errors.hpp"

namespace rtd::corpus {

namespace {

constexpr int kMergeTableVersion = 1;

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  return in;
}

std::vector<std::string> split_spaces(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

}  // namespace

void write_corpus(const std::filesystem::path& path, const std::vector<Sentence>& sentences) {
  auto out = open_out(path);
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
    out << '\n';
  }
}

std::vector<Sentence> read_corpus(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<Sentence> out;
  std::string line;
  while (std::getline(in, line)) {
    auto words = split_spaces(line);
    if (!words.empty()) out.push_back(std::move(words));
  }
  return out;
}

void write_lexicon(const std::filesystem::path& path, const Lexicon& lexicon) {
  const auto& inventory = PhoneInventory::standard();
  auto out = open_out(path);
  for (const auto& [word, phones] : lexicon.entries()) {
    out << word << '\t';
    for (std::size_t i = 0; i < phones.size(); ++i) {
      out << (i ? " " : "") << inventory.name(phones[i]);
    }
    out << '\n';
  }
}

Lexicon read_lexicon(const std::filesystem::path& path) {
  const auto& inventory = PhoneInventory::standard();
  auto in = open_in(path);
  Lexicon lexicon;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw LoadError(path.string() + ":" + std::to_string(line_no) + ": missing TAB");
    }
    std::vector<int> phones;
    for (const auto& name : split_spaces(line.substr(tab + 1))) phones.push_back(inventory.id(name));
    lexicon.add(line.substr(0, tab), std::move(phones));
  }
  return lexicon;
}

void write_merge_table(const std::filesystem::path& path, const MergeTable& merges) {
  nlohmann::json j;
  j["format_version"] = kMergeTableVersion;
  auto& list = j["merges"] = nlohmann::json::array();
  for (const auto& [a, b] : merges.merges()) list.push_back({a, b});
  j["vocab"] = merges.vocab();
  auto out = open_out(path);
  out << j.dump(1) << '\n';
}

MergeTable read_merge_table(const std::filesystem::path& path) {
  auto in = open_in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  if (!j.contains("format_version") || j["format_version"] != kMergeTableVersion) {
    throw LoadError(path.string() + ": unsupported merge table version");
  }
  std::vector<MergeTable::Merge> merges;
  for (const auto& m : j.at("merges")) merges.emplace_back(m.at(0), m.at(1));
  return MergeTable(std::move(merges), j.at("vocab").get<std::vector<std::string>>());
}

void write_phone_corpus(const std::filesystem::path& path, const std::vector<Sentence>& sentences,
                        const Lexicon& lexicon) {
  const auto& inventory = PhoneInventory::standard();
  auto out = open_out(path);
  for (const auto& s : sentences) {
    const auto seq = words_to_phones(s, lexicon);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      out << (i ? " " : "") << inventory.name(seq.phones[i]);
    }
    out << '\n';
  }
}

}  // namespace rtd::corpus
