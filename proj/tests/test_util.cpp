#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>

#include "ieatforge/errors.hpp"
#include "ieatforge/jsonl.hpp"
#include "ieatforge/sha256.hpp"
#include "ieatforge/toml_lite.hpp"
#include "ieatforge/util.hpp"
#include "ieatforge/wav.hpp"
#include "test_support.hpp"

using namespace ieatforge;

TEST_CASE("sha256 known-answer vectors") {
    CHECK(sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
    // spans two blocks
    CHECK(sha256_hex(std::string(1000, 'a')) ==
          "41edece42d63e8d9bf515a9ba6932e1c20cbc9f5a5d134645adb5db1b9737ea3");
}

TEST_CASE("fnv1a64 is stable and order-sensitive") {
    CHECK(fnv1a64("abc") == fnv1a64("abc"));
    CHECK(fnv1a64("abc") != fnv1a64("acb"));
    CHECK(derive_seed(1, "x") != derive_seed(2, "x"));
    CHECK(derive_seed(1, "x") != derive_seed(1, "y"));
    CHECK(derive_seed(1, "x") == derive_seed(1, "x"));
}

TEST_CASE("string helpers") {
    CHECK(to_lower("AbC") == "abc");
    CHECK(trim("  a b \n") == "a b");
    CHECK(starts_with("prefix-rest", "prefix"));
    CHECK_FALSE(starts_with("pre", "prefix"));
    CHECK(split("a,b,,c", ',') == std::vector<std::string>{"a", "b", "", "c"});
    CHECK(count_occurrences("<think>x</think>", "<think>") == 1);
    CHECK(count_occurrences("aaaa", "aa") == 2);
}

TEST_CASE("answer normalization folds case, punctuation and whitespace") {
    CHECK(normalize_answer("Paris.") == normalize_answer("paris"));
    CHECK(normalize_answer("  The  Pacific   Ocean! ") == "the pacific ocean");
    CHECK(normalize_answer("北京。") == normalize_answer("北京"));
}

TEST_CASE("codepoint helpers handle UTF-8") {
    CHECK(codepoint_count("你好") == 2);
    CHECK(codepoint_count("abc") == 3);
    CHECK(codepoint_count("a你b") == 3);
    CHECK(contains_cjk("你好"));
    CHECK_FALSE(contains_cjk("hello"));
    CHECK(truncate_codepoints("你好世界", 2) == "你好");
    CHECK(truncate_codepoints("abc", 10) == "abc");
}

TEST_CASE("wav round-trip and header duration") {
    WavData wav;
    wav.sample_rate_hz = 8000;
    for (int i = 0; i < 1600; ++i) wav.samples.push_back(static_cast<int16_t>(i * 7 % 1000 - 500));
    std::string bytes = encode_wav(wav);
    WavData back = decode_wav(bytes);
    CHECK(back.sample_rate_hz == 8000);
    CHECK(back.samples == wav.samples);
    CHECK(back.duration_s() == doctest::Approx(0.2));

    auto dir = test_support::tmp_dir("wav");
    write_wav(dir / "t.wav", wav);
    CHECK(read_wav(dir / "t.wav").samples == wav.samples);
    CHECK_THROWS_AS(read_wav(dir / "missing.wav"), UnreadableAudioError);
    CHECK_THROWS_AS(decode_wav("not a wav"), UnreadableAudioError);
}

TEST_CASE("resample preserves duration approximately") {
    WavData wav;
    wav.sample_rate_hz = 16000;
    wav.samples.assign(16000, 1000);
    WavData down = resample(wav, 8000);
    CHECK(down.sample_rate_hz == 8000);
    CHECK(std::abs(down.duration_s() - 1.0) < 1.0 / 8000);
}

TEST_CASE("jsonl read/write with malformed rows") {
    auto dir = test_support::tmp_dir("jsonl");
    write_file(dir / "x.jsonl", "{\"a\":1}\nnot json\n\n{\"b\":2}\n[1,2]\n");
    JsonlReadResult r = read_jsonl(dir / "x.jsonl");
    CHECK(r.rows.size() == 2);
    CHECK(r.skipped == 2);

    std::vector<json> rows = {json{{"k", "v"}}, json{{"n", 1.5}}};
    write_jsonl(dir / "y.jsonl", rows);
    JsonlReadResult back = read_jsonl(dir / "y.jsonl");
    REQUIRE(back.rows.size() == 2);
    CHECK(back.rows[0] == rows[0]);
    CHECK(back.rows[1] == rows[1]);
    CHECK_THROWS_AS(read_jsonl(dir / "missing.jsonl"), MissingPathError);
}

TEST_CASE("toml subset parser") {
    const char* text = R"(
# comment
top = 1
[a]
s = "hello # not a comment"
f = 2.5
flag = true
list = [1, 2, 3]
names = ["x", "y"]
[a.b]
deep = "ok"
)";
    json doc = parse_toml(text);
    CHECK(doc["top"] == 1);
    CHECK(doc["a"]["s"] == "hello # not a comment");
    CHECK(doc["a"]["f"] == 2.5);
    CHECK(doc["a"]["flag"] == true);
    CHECK(doc["a"]["list"] == json::array({1, 2, 3}));
    CHECK(doc["a"]["names"] == json::array({"x", "y"}));
    CHECK(doc["a"]["b"]["deep"] == "ok");
}

TEST_CASE("toml env interpolation") {
    setenv("IEATFORGE_TEST_VAR", "resolved", 1);
    json doc = parse_toml("url = \"http://${IEATFORGE_TEST_VAR}/api\"\nmissing = \"${IEATFORGE_UNSET_VAR}\"");
    CHECK(doc["url"] == "http://resolved/api");
    CHECK(doc["missing"] == "");
    unsetenv("IEATFORGE_TEST_VAR");
}

TEST_CASE("toml parser rejects malformed input") {
    CHECK_THROWS_AS(parse_toml("key"), ConfigValidationError);
    CHECK_THROWS_AS(parse_toml("[open\nk = 1"), ConfigValidationError);
    CHECK_THROWS_AS(parse_toml("k = \"unterminated"), ConfigValidationError);
    CHECK_THROWS_AS(parse_toml("k = what"), ConfigValidationError);
}
