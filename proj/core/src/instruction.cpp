#include "fjd/instruction.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "fjd/errors.hpp"

namespace fjd {

const char* to_string(Placement placement) {
  return placement == Placement::Prefix ? "prefix" : "suffix";
}

Placement placement_from_string(std::string_view text) {
  if (text == "prefix") return Placement::Prefix;
  if (text == "suffix") return Placement::Suffix;
  throw Error(ErrorKind::SchemaError,
              "placement must be \"prefix\" or \"suffix\", got \"" + std::string(text) + "\"");
}

void validate_instruction(const Instruction& instruction) {
  if (instruction.id.empty()) {
    throw Error(ErrorKind::InvalidInput, "instruction id is empty");
  }
  for (unsigned char c : instruction.text) {
    if (c < 0x20 || c == 0x7f) {
      throw Error(ErrorKind::InvalidInput,
                  "instruction \"" + instruction.id + "\" contains a control character");
    }
  }
}

AssembledPrompt assemble(const Instruction& instruction, std::string_view query) {
  validate_instruction(instruction);
  if (query.empty()) {
    throw Error(ErrorKind::InvalidInput, "query is empty");
  }

  AssembledPrompt prompt;
  if (instruction.empty()) {
    prompt.full_text = std::string(query);
    prompt.instruction_span = Span{0, 0};
    prompt.query_span = Span{0, prompt.full_text.size()};
    return prompt;
  }

  if (instruction.placement == Placement::Prefix) {
    prompt.full_text.reserve(instruction.text.size() + instruction.separator.size() + query.size());
    prompt.full_text = instruction.text;
    prompt.instruction_span = Span{0, prompt.full_text.size()};
    prompt.full_text += instruction.separator;
    const std::size_t query_begin = prompt.full_text.size();
    prompt.full_text += query;
    prompt.query_span = Span{query_begin, prompt.full_text.size()};
  } else {
    prompt.full_text = std::string(query);
    prompt.query_span = Span{0, prompt.full_text.size()};
    prompt.full_text += instruction.separator;
    const std::size_t instr_begin = prompt.full_text.size();
    prompt.full_text += instruction.text;
    prompt.instruction_span = Span{instr_begin, prompt.full_text.size()};
  }
  return prompt;
}

std::vector<Instruction> builtin_catalog() {
  struct Entry {
    const char* id;
    const char* text;
  };
  // Stock affirmative instructions; ids stay stable across releases.
  static const Entry kEntries[] = {
      {"good-assistant", "You are a good Assistant."},
      {"promote-safety", "Respond in a way that promotes safety."},
      {"prioritize-safety", "Provide an answer that prioritizes user safety."},
      {"responsible-llm", "Remember you are a responsible and helpful LLM."},
      {"step-by-step", "Let's think step by step."},
  };

  std::vector<Instruction> catalog;
  catalog.push_back(Instruction::none());
  for (const Entry& e : kEntries) {
    catalog.push_back(Instruction{e.id, e.text, Placement::Prefix, " "});
    catalog.push_back(Instruction{std::string(e.id) + "-suffix", e.text, Placement::Suffix, " "});
  }
  return catalog;
}

Instruction catalog_entry(const std::vector<Instruction>& catalog, std::string_view id) {
  for (const Instruction& instruction : catalog) {
    if (instruction.id == id) return instruction;
  }
  throw Error(ErrorKind::MissingRecord, "no instruction with id \"" + std::string(id) + "\"");
}

std::vector<Instruction> load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::IoError, "cannot open catalog file " + path.string());
  }

  std::vector<Instruction> catalog;
  std::set<std::string> seen_ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::ParseError,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!record.contains("id") || !record.contains("placement") || !record.contains("text")) {
      throw Error(ErrorKind::SchemaError,
                  path.string() + ":" + std::to_string(line_no) +
                      ": catalog entry needs id, placement and text");
    }
    Instruction instruction;
    instruction.id = record.at("id").get<std::string>();
    instruction.placement = placement_from_string(record.at("placement").get<std::string>());
    instruction.text = record.at("text").get<std::string>();
    if (record.contains("separator")) {
      instruction.separator = record.at("separator").get<std::string>();
    }
    validate_instruction(instruction);
    if (!seen_ids.insert(instruction.id).second) {
      throw Error(ErrorKind::IngestError,
                  path.string() + ":" + std::to_string(line_no) + ": duplicate instruction id \"" +
                      instruction.id + "\"");
    }
    catalog.push_back(std::move(instruction));
  }
  return catalog;
}

}  // namespace fjd
