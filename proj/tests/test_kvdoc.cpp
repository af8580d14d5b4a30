#include "knobtune/errors.hpp"
#include "knobtune/kvdoc.hpp"

#include <doctest.h>

using namespace knobtune;

TEST_SUITE_BEGIN("kvdoc");

TEST_CASE("parses records, comments, and blank lines") {
    const char* text =
        "# header comment\n"
        "[knob]\n"
        "name = latency_ns\n"
        "min = 1000000\n"
        "\n"
        "[rule]\n"
        "id = r1\n"
        "description = a = b style values survive\n";
    KvDocument doc = parse_kvdoc(text);
    REQUIRE(doc.records.size() == 2);
    CHECK(doc.records[0].type == "knob");
    CHECK(doc.records[0].require("name") == "latency_ns");
    CHECK(doc.records[0].require_int("min") == 1000000);
    CHECK(doc.records[1].require("description") == "a = b style values survive");
}

TEST_CASE("field outside a record is an error") {
    CHECK_THROWS_AS(parse_kvdoc("name = x\n"), ConfigError);
}

TEST_CASE("missing field names the record and key") {
    KvDocument doc = parse_kvdoc("[knob]\nname = x\n");
    CHECK_THROWS_WITH_AS(doc.records[0].require("path"),
                         "[knob] record missing field 'path'", ConfigError);
}

TEST_CASE("render and reparse round-trips") {
    KvDocument doc = parse_kvdoc("[a]\nx = 1\ny = two words\n\n[b]\nz = 3\n");
    KvDocument again = parse_kvdoc(render_kvdoc(doc));
    REQUIRE(again.records.size() == doc.records.size());
    CHECK(again.records[0].fields == doc.records[0].fields);
    CHECK(again.records[1].fields == doc.records[1].fields);
}

TEST_SUITE_END();
