#include <catch2/catch_amalgamated.hpp>

#include "zeroavsr/roman.hpp"

using namespace zeroavsr;
using namespace zeroavsr::roman;

namespace {

// Independent full-matrix DP oracle (the library uses a two-row rolling
// buffer; this one is the textbook quadratic table).
template <class T>
size_t dp_oracle(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<std::vector<size_t>> d(a.size() + 1, std::vector<size_t>(b.size() + 1, 0));
  for (size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (size_t i = 1; i <= a.size(); ++i)
    for (size_t j = 1; j <= b.size(); ++j) {
      const size_t del = d[i - 1][j] + 1;
      const size_t ins = d[i][j - 1] + 1;
      const size_t sub = d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      d[i][j] = std::min({del, ins, sub});
    }
  return d[a.size()][b.size()];
}

std::string random_string(Rng& rng, size_t max_len, const std::string& charset = "abcd ") {
  const size_t len = size_t(rng.uniform_int(0, int64_t(max_len)));
  std::string s;
  for (size_t i = 0; i < len; ++i) s += charset[size_t(rng.uniform_int(0, int64_t(charset.size()) - 1))];
  return s;
}

}  // namespace

TEST_CASE("alphabet ids are contiguous with blank reserved at zero") {
  const auto alpha = RomanAlphabet::basic();
  REQUIRE(alpha.size() == 28);
  REQUIRE(alpha.vocab_size() == 29);
  REQUIRE(RomanAlphabet::blank_id() == 0);
  for (int id = 1; id <= alpha.size(); ++id) REQUIRE(alpha.id_of(alpha.token(id)) == id);
  REQUIRE(alpha.id_of('a') == 1);
  REQUIRE(alpha.id_of('z') == 26);
  REQUIRE(alpha.id_of(' ') == 27);
  REQUIRE(alpha.id_of('\'') == 28);
}

TEST_CASE("tokenize round trip and unknown token error") {
  const auto alpha = RomanAlphabet::basic();
  REQUIRE(tokenize_roman("ab", alpha) == std::vector<int>{1, 2});
  REQUIRE(tokenize_roman("", alpha).empty());
  REQUIRE(tokenize_roman("a a", alpha) == std::vector<int>{1, alpha.space_id(), 1});

  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::string s = random_string(rng, 30, "abcdefghijklmnopqrstuvwxyz '");
    REQUIRE(detokenize_roman(tokenize_roman(s, alpha), alpha) == s);
  }

  try {
    tokenize_roman("aZb", alpha);
    FAIL("expected UnknownToken");
  } catch (const UnknownToken& e) {
    REQUIRE(e.codepoint == uint32_t('Z'));
    REQUIRE(e.position == 1);
  }
}

TEST_CASE("edit distance basics") {
  REQUIRE(edit_distance(std::string("kitten"), std::string("sitting")) == 3);
  REQUIRE(edit_distance(std::string("abc"), std::string("abc")) == 0);
  REQUIRE(edit_distance(std::string(""), std::string("abc")) == 3);
  REQUIRE(edit_distance(std::string("abc"), std::string("")) == 3);
}

TEST_CASE("edit distance is a metric (property)") {
  Rng rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = utf8_decode(random_string(rng, 20));
    const auto b = utf8_decode(random_string(rng, 20));
    const auto c = utf8_decode(random_string(rng, 20));
    const size_t dab = edit_distance(a, b);
    REQUIRE(dab == edit_distance(b, a));
    REQUIRE((dab == 0) == (a == b));
    REQUIRE(dab <= edit_distance(a, c) + edit_distance(c, b));
  }
}

TEST_CASE("cer and wer match the quadratic DP oracle on 1000 random pairs") {
  Rng rng(123);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::string hyp = random_string(rng, 25);
    const std::string ref = random_string(rng, 25, "abcde ");
    const auto rc = utf8_decode(ref);
    if (rc.empty()) continue;
    REQUIRE(cer(hyp, ref) == double(dp_oracle(utf8_decode(hyp), rc)) / double(rc.size()));
    const auto rw = split_words(ref);
    if (rw.empty()) continue;
    REQUIRE(wer(hyp, ref) == double(dp_oracle(split_words(hyp), rw)) / double(rw.size()));
  }
}

TEST_CASE("cer examples") {
  REQUIRE(cer("abc", "abc") == 0.0);
  REQUIRE(cer("abd", "abc") == Catch::Approx(1.0 / 3.0));
  REQUIRE(cer("", "ab") == 1.0);
  REQUIRE_THROWS_AS(cer("x", ""), EmptyReference);
}

TEST_CASE("wer examples") {
  REQUIRE(wer("a b", "a b") == 0.0);
  REQUIRE(wer("a c", "a b") == 0.5);
  REQUIRE(wer("b a", "a b") == 1.0);
  REQUIRE_THROWS_AS(wer("x", "   "), EmptyReference);
}

TEST_CASE("normalization matches the frozen reference corpus") {
  // Expected values computed by tests/gen_norm_oracle.py (unicodedata-based).
  static const std::pair<const char*, const char*> kPairs[] = {
      {"Hello,  World!", "hello world"},
      {"don't", "don't"},
      {"Ça va??", "ça va"},
      {"Ça va bien.", "ça va bien"},
      {"  leading and trailing  ", "leading and trailing"},
      {"UPPER lower MiXeD", "upper lower mixed"},
      {"áéí combining acutes", "áéí combining acutes"},
      {"Voilà — c'est «fini» !", "voilà c'est fini"},
      {"¿Qué tal? ¡Bien!", "qué tal bien"},
      {"Straße und Grüße", "straße und grüße"},
      {"naïve façade déjà vu", "naïve façade déjà vu"},
      {"L’été c’est beau", "l'été c'est beau"},
      {"tabs\tand\nnewlines", "tabs and newlines"},
      {"multiple     spaces", "multiple spaces"},
      {"semi;colon: and period.", "semicolon and period"},
      {"(parens) [brackets] {braces}", "parens brackets braces"},
      {"dash-separated words", "dashseparated words"},
      {"em—dash and en–dash", "emdash and endash"},
      {"ellipsis… here", "ellipsis here"},
      {"quotes “double” and ‘single’", "quotes double and single'"},
      {"Ελληνικά Κείμενο", "ελληνικά κείμενο"},
      {"ΑΒΓΔΕΖ", "αβγδεζ"},
      {"Русский Текст", "русский текст"},
      {"ЖУРНАЛ СЕГОДНЯ", "журнал сегодня"},
      {"Čeština a Šumava", "čeština a šumava"},
      {"Ñandú y niño", "ñandú y niño"},
      {"Português: ação, coração!", "português ação coração"},
      {"Über Öl und Äpfel", "über öl und äpfel"},
      {"façade FAÇADE FaÇaDe", "façade façade façade"},
      {"hello", "hello"},
      {"", ""},
      {"   ", ""},
      {"!!!", ""},
      {"'", "'"},
      {"it's, it's; it's!", "it's it's it's"},
      {"123 numbers 456", "123 numbers 456"},
      {"mixed123text", "mixed123text"},
      {"a b c d e", "a b c d e"},
      {"ÀÈÌÒÙ àèìòù", "àèìòù àèìòù"},
      {"Ýó Ÿö", "ýó ÿö"},
      {"Õs Ãs", "õs ãs"},
      {"word'с русским", "word'с русским"},
      {"Ô Château!", "ô château"},
      {"El señor López", "el señor lópez"},
      {"Têtu, têtue?", "têtu têtue"},
      {"SÍ sí Sí", "sí sí sí"},
      {"ângulo Ângulo", "ângulo ângulo"},
      {"ö ü ä ß", "ö ü ä ß"},
      {"ñ ö ú composed", "ñ ö ú composed"},
      {"Fin de l'histoire.", "fin de l'histoire"},
  };
  for (const auto& [input, expected] : kPairs) {
    CAPTURE(input);
    REQUIRE(normalize_text(input) == expected);
  }
}

TEST_CASE("normalization is idempotent (property)") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    std::string s;
    const int len = int(rng.uniform_int(0, 40));
    for (int i = 0; i < len; ++i) {
      // sample codepoints, not bytes
      static const std::vector<std::string> pieces = {
          "a", "b", "Z", " ", ",", ".", "!", "'", "É", "Σ", "Д", "’", "  "};
      s += pieces[size_t(rng.uniform_int(0, int64_t(pieces.size()) - 1))];
    }
    const std::string once = normalize_text(s);
    REQUIRE(normalize_text(once) == once);
  }
}
