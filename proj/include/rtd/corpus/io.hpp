#pragma once

#include <filesystem>
#include <vector>

#include "rtd/corpus/bpe.hpp"
#include "rtd/corpus/lexicon.hpp"

namespace rtd::corpus {

// One sentence per line, words separated by single spaces.
void write_corpus(const std::filesystem::path& path, const std::vector<Sentence>& sentences);
std::vector<Sentence> read_corpus(const std::filesystem::path& path);

// One entry per line: word<TAB>phone phone phone
void write_lexicon(const std::filesystem::path& path, const Lexicon& lexicon);
Lexicon read_lexicon(const std::filesystem::path& path);

// {"format_version": 1, "merges": [[a, b], ...], "vocab": [...]}
void write_merge_table(const std::filesystem::path& path, const MergeTable& merges);
MergeTable read_merge_table(const std::filesystem::path& path);

// Phone names of each sentence, one sentence per line, boundary phone "|".
void write_phone_corpus(const std::filesystem::path& path, const std::vector<Sentence>& sentences,
                        const Lexicon& lexicon);

}  // namespace rtd::corpus
