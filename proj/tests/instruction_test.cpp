#include <filesystem>
#include <fstream>
#include <set>

#include <doctest.h>

#include "fjd/errors.hpp"
#include "fjd/instruction.hpp"

using namespace fjd;

TEST_CASE("prefix assembly records exact spans") {
  const Instruction instruction{"good-assistant", "You are a good Assistant.",
                                Placement::Prefix, " "};
  const AssembledPrompt prompt = assemble(instruction, "Tell me a story");
  CHECK(prompt.full_text == "You are a good Assistant. Tell me a story");
  CHECK(prompt.instruction_text() == "You are a good Assistant.");
  CHECK(prompt.query_text() == "Tell me a story");
  CHECK(prompt.has_instruction());
}

TEST_CASE("suffix assembly keeps the query first") {
  const Instruction instruction{"step-by-step-suffix", "Let's think step by step.",
                                Placement::Suffix, " "};
  const AssembledPrompt prompt = assemble(instruction, "What is 2+2?");
  CHECK(prompt.full_text == "What is 2+2? Let's think step by step.");
  CHECK(prompt.query_text() == "What is 2+2?");
  CHECK(prompt.instruction_text() == "Let's think step by step.");
}

TEST_CASE("assembly round-trips the query byte-for-byte") {
  const std::string query = "unicode \xc3\xa9\xc3\xa0 and spaces   preserved";
  for (const Instruction& instruction : builtin_catalog()) {
    const AssembledPrompt prompt = assemble(instruction, query);
    CHECK(prompt.query_text() == query);
    // Spans cover the full text minus the separator.
    const std::size_t sep = instruction.empty() ? 0 : instruction.separator.size();
    CHECK(prompt.instruction_span.size() + prompt.query_span.size() + sep ==
          prompt.full_text.size());
  }
}

TEST_CASE("the none instruction assembles to the bare query") {
  const AssembledPrompt prompt = assemble(Instruction::none(), "just a query");
  CHECK(prompt.full_text == "just a query");
  CHECK_FALSE(prompt.has_instruction());
  CHECK(prompt.query_text() == "just a query");
}

TEST_CASE("assembly is deterministic") {
  const Instruction instruction{"promote-safety", "Respond in a way that promotes safety.",
                                Placement::Prefix, " "};
  const AssembledPrompt a = assemble(instruction, "q");
  const AssembledPrompt b = assemble(instruction, "q");
  CHECK(a.full_text == b.full_text);
  CHECK(a.instruction_span.begin == b.instruction_span.begin);
  CHECK(a.query_span.end == b.query_span.end);
}

TEST_CASE("empty query is invalid") {
  try {
    assemble(Instruction::none(), "");
    FAIL("expected invalid-input");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidInput);
  }
}

TEST_CASE("control characters in instruction text are rejected") {
  const Instruction bad{"bad", "line\nbreak", Placement::Prefix, " "};
  CHECK_THROWS_AS(assemble(bad, "q"), Error);
}

TEST_CASE("builtin catalog") {
  const std::vector<Instruction> catalog = builtin_catalog();

  SUBCASE("contains the stock instructions in both placements") {
    const std::vector<std::string> expected_texts = {
        "Respond in a way that promotes safety.",
        "Provide an answer that prioritizes user safety.",
        "Remember you are a responsible and helpful LLM.",
        "Let's think step by step.",
        "You are a good Assistant.",
    };
    for (const std::string& text : expected_texts) {
      bool prefix = false, suffix = false;
      for (const Instruction& instruction : catalog) {
        if (instruction.text != text) continue;
        (instruction.placement == Placement::Prefix ? prefix : suffix) = true;
      }
      CHECK_MESSAGE(prefix, text);
      CHECK_MESSAGE(suffix, text);
    }
  }

  SUBCASE("contains the none entry") {
    bool has_none = false;
    for (const Instruction& instruction : catalog) {
      if (instruction.empty()) has_none = true;
    }
    CHECK(has_none);
  }

  SUBCASE("ids are unique") {
    std::set<std::string> ids;
    for (const Instruction& instruction : catalog) {
      CHECK(ids.insert(instruction.id).second);
    }
  }

  SUBCASE("lookup by id") {
    CHECK(catalog_entry(catalog, "promote-safety").placement == Placement::Prefix);
    CHECK(catalog_entry(catalog, "promote-safety-suffix").placement == Placement::Suffix);
    CHECK_THROWS_AS(catalog_entry(catalog, "does-not-exist"), Error);
  }
}

TEST_CASE("catalog file round trip") {
  const std::filesystem::path path =
      std::filesystem::temp_directory_path() / "fjd_catalog_test.jsonl";
  {
    std::ofstream out(path, std::ios::trunc);
    out << R"({"id":"a","placement":"prefix","text":"Stay safe."})" << '\n';
    out << R"({"id":"b","placement":"suffix","text":"Be helpful.","separator":"\n"})" << '\n';
  }
  const std::vector<Instruction> catalog = load_catalog(path);
  REQUIRE(catalog.size() == 2);
  CHECK(catalog[0].id == "a");
  CHECK(catalog[0].placement == Placement::Prefix);
  CHECK(catalog[1].separator == "\n");

  {
    std::ofstream out(path, std::ios::trunc);
    out << R"({"id":"a","placement":"prefix","text":"Stay safe."})" << '\n';
    out << R"({"id":"a","placement":"suffix","text":"Again."})" << '\n';
  }
  CHECK_THROWS_AS(load_catalog(path), Error);

  {
    std::ofstream out(path, std::ios::trunc);
    out << R"({"id":"a","placement":"prefix")" << '\n';
  }
  try {
    load_catalog(path);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ParseError);
  }
  std::filesystem::remove(path);
}
