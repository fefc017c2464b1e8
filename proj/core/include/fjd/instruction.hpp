#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fjd {

enum class Placement { Prefix, Suffix };

const char* to_string(Placement placement);
Placement placement_from_string(std::string_view text);

// One catalog entry. Empty text is the first-class "none" instruction, so
// plain first-token scoring and instruction-prepended scoring share a single
// assembly path. The separator is configurable per entry because some chat
// backends want "\n" instead of a space.
struct Instruction {
  std::string id;
  std::string text;
  Placement placement = Placement::Prefix;
  std::string separator = " ";

  bool empty() const { return text.empty(); }

  static Instruction none() { return Instruction{"none", "", Placement::Prefix, ""}; }
};

// Throws unless the id is non-empty and the text is free of control
// characters. Empty text is allowed (the none entry).
void validate_instruction(const Instruction& instruction);

// Half-open byte range [begin, end) into AssembledPrompt::full_text.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
};

struct AssembledPrompt {
  std::string full_text;
  Span instruction_span;
  Span query_span;

  std::string_view instruction_text() const {
    return std::string_view(full_text).substr(instruction_span.begin,
                                              instruction_span.size());
  }
  std::string_view query_text() const {
    return std::string_view(full_text).substr(query_span.begin, query_span.size());
  }
  bool has_instruction() const { return !instruction_span.empty(); }
};

// Deterministic concatenation with exact span bookkeeping. Prefix placement
// yields "<text><sep><query>", suffix "<query><sep><text>", and the none
// instruction yields the bare query. The query substring is always
// byte-identical to the input.
AssembledPrompt assemble(const Instruction& instruction, std::string_view query);

// The built-in instruction set: the none entry plus the stock affirmative
// instructions, each in prefix and suffix placement. Ids are stable so
// reports can compare variants across runs.
std::vector<Instruction> builtin_catalog();

// Looks up a catalog entry by id; throws MissingRecord when absent.
Instruction catalog_entry(const std::vector<Instruction>& catalog, std::string_view id);

// Catalog file: UTF-8 JSON lines, one object per entry with keys
// id / placement / text and an optional separator.
std::vector<Instruction> load_catalog(const std::filesystem::path& path);

}  // namespace fjd
