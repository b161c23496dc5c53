#include "corpus.hpp"

#include "robin/error.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace robin;
using namespace robin::testing;

namespace {

std::string describe(const std::multiset<FindingKey>& keys) {
    std::ostringstream out;
    for (const auto& [check, cases] : keys) {
        out << "  " << check << ":";
        for (const auto& c : cases) out << " " << c;
        out << "\n";
    }
    return out.str();
}

} // namespace

TEST(Corpus, CaseFormat) {
    auto r = parse_case("GET https://shop.test/a?b=1 HTTP/1.1\nHost: shop.test\n\n=== response ===\n"
                        "HTTP/1.1 200 OK\nContent-Type: text/plain\nContent-Length: 99\n\nhello\n",
                        7);
    EXPECT_EQ(r.id, 7u);
    EXPECT_EQ(r.scheme, http::Scheme::https);
    EXPECT_EQ(r.request.target.path_and_query, "/a?b=1");
    ASSERT_TRUE(r.response);
    EXPECT_EQ(r.response->body, "hello\n");
    EXPECT_EQ(r.response->headers.get("Content-Length").value_or(""), "6");
    EXPECT_EQ(r.state, ExchangeState::completed);
    EXPECT_THROW(parse_case("GET / HTTP/1.1\n\n", 1), Error);
}

TEST(Corpus, SeededFindingsExactlyAsLabelled) {
    auto cases = load_corpus(corpus_dir() / "seeded");
    ASSERT_FALSE(cases.empty());
    auto expected = load_expected(corpus_dir() / "seeded" / "expected.json");
    auto got = scan_corpus(cases);
    EXPECT_EQ(got, expected) << "got:\n" << describe(got) << "expected:\n" << describe(expected);
}

TEST(Corpus, CleanSetHasNoFindings) {
    auto cases = load_corpus(corpus_dir() / "clean");
    ASSERT_GE(cases.size(), 20u);
    auto got = scan_corpus(cases);
    EXPECT_TRUE(got.empty()) << describe(got);
}
