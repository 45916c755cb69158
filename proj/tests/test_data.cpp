#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "miniswift/data/mappers.hpp"
#include "miniswift/frontend/loader.hpp"
#include "test_util.hpp"

using namespace miniswift::data;
using testutil::TempDir;

namespace {

const std::filesystem::path kFixtures = MINISWIFT_FIXTURES;

struct Types {
  TypePtr image = LogicalType::file("Image");
  TypePtr header = LogicalType::file("Header");
  TypePtr volume;
  TypePtr run;
  TypePtr diff;
  Types() {
    auto v = std::make_shared<LogicalType>();
    v->kind = LogicalType::Kind::structure;
    v->name = "Volume";
    v->fields = {{"img", image}, {"hdr", header}};
    volume = v;
    auto r = std::make_shared<LogicalType>();
    r->kind = LogicalType::Kind::structure;
    r->name = "Run";
    r->fields = {{"v", LogicalType::array_of(volume)}};
    run = r;
    auto d = std::make_shared<LogicalType>();
    d->kind = LogicalType::Kind::structure;
    d->name = "DiffStruct";
    d->fields = {{"cntr1", LogicalType::primitive("int")},
                 {"cntr2", LogicalType::primitive("int")},
                 {"plus", image},
                 {"minus", image},
                 {"diff", image}};
    diff = d;
  }
};

MapperDescriptor desc(std::string name, std::map<std::string, std::string> params, std::filesystem::path base = {}) {
  return MapperDescriptor{std::move(name), std::move(params), std::move(base)};
}

// Independent walk: does the resolved node tree have the declared shape?
bool tree_matches(const NodeStore& s, NodeId id, const LogicalType& t) {
  const auto& n = s.at(id);
  if (n.type->kind != t.kind) return false;
  if (t.is_struct()) {
    if (n.children.size() != t.fields.size()) return false;
    for (std::size_t i = 0; i < t.fields.size(); ++i)
      if (!tree_matches(s, n.children[i], *t.fields[i].type)) return false;
  }
  if (t.is_array())
    for (auto [i, e] : s.elements(id))
      if (!tree_matches(s, e, *t.element)) return false;
  return true;
}

}  // namespace

TEST(Types, EqualityRules) {
  Types T;
  EXPECT_TRUE(same_type(LogicalType::array_of(T.volume), LogicalType::array_of(T.volume)));
  EXPECT_FALSE(same_type(T.image, T.header));
  EXPECT_TRUE(same_type(LogicalType::primitive("int"), LogicalType::primitive("int")));
  EXPECT_TRUE(assignable(LogicalType::primitive("float"), LogicalType::primitive("int")));
  EXPECT_FALSE(assignable(LogicalType::primitive("int"), LogicalType::primitive("float")));
  EXPECT_TRUE(is_struct_of_files(T.volume));
  EXPECT_FALSE(is_struct_of_files(T.run));
  TypeTable tt;
  EXPECT_EQ(tt.find("date"), tt.find("string"));
}

TEST(NodeStore, StructResolvesWhenChildrenDo) {
  Types T;
  NodeStore s;
  NodeId v = s.create(T.volume, "v");
  int fired = 0;
  s.on_settled(v, [&] { ++fired; });
  s.resolve_leaf(s.field(v, "img"), "a.img");
  EXPECT_FALSE(s.terminal(v));
  s.resolve_leaf(s.field(v, "hdr"), "a.hdr");
  EXPECT_TRUE(s.resolved(v));
  EXPECT_EQ(fired, 1);
  EXPECT_EQ(s.logical_path(s.field(v, "hdr")), "v.hdr");
}

TEST(NodeStore, ArrayNeedsCloseAndElements) {
  Types T;
  NodeStore s;
  NodeId a = s.create(LogicalType::array_of(T.image), "a");
  NodeId e0 = s.element(a, 0);
  NodeId e1 = s.element(a, 1);
  EXPECT_EQ(s.element(a, 1), e1);
  s.resolve_leaf(e0);
  s.resolve_leaf(e1);
  EXPECT_FALSE(s.terminal(a));
  bool closed = false;
  s.on_closed(a, [&] { closed = true; });
  s.close(a);
  EXPECT_TRUE(closed);
  EXPECT_TRUE(s.resolved(a));
  EXPECT_EQ(s.element(a, 5), kNoNode);
  EXPECT_EQ(s.logical_path(e1), "a[1]");
}

TEST(NodeStore, EmptyClosedArrayResolves) {
  Types T;
  NodeStore s;
  NodeId a = s.create(LogicalType::array_of(T.image), "a");
  s.close(a);
  EXPECT_TRUE(s.resolved(a));
}

TEST(NodeStore, FailurePropagatesUpward) {
  Types T;
  NodeStore s;
  NodeId r = s.create(T.run, "r");
  NodeId arr = s.field(r, "v");
  NodeId e = s.element(arr, 0);
  EXPECT_TRUE(s.fail(s.field(e, "img"), "boom"));
  EXPECT_TRUE(s.failed(e));
  EXPECT_TRUE(s.failed(arr));
  EXPECT_TRUE(s.failed(r));
  EXPECT_FALSE(s.fail(s.field(e, "img"), "again"));
  EXPECT_EQ(s.error(s.field(e, "img")), "boom");
}

TEST(NodeStore, SecondResolveIsDoubleAssignment) {
  NodeStore s;
  NodeId x = s.create(LogicalType::primitive("int"), "x");
  s.resolve_leaf(x, "1");
  EXPECT_THROW(s.resolve_leaf(x, "2"), DoubleAssignment);
  EXPECT_EQ(s.value(x), "1");
}

TEST(NodeStore, SingleAssignmentUnderRacingThreads) {
  for (int round = 0; round < 50; ++round) {
    NodeStore s;
    std::vector<NodeId> leaves;
    for (int i = 0; i < 16; ++i) leaves.push_back(s.create(LogicalType::primitive("int"), "x" + std::to_string(i)));
    std::atomic<int> wins{0}, losses{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
      threads.emplace_back([&, t] {
        std::mt19937 rng(round * 31 + t);
        auto order = leaves;
        std::shuffle(order.begin(), order.end(), rng);
        for (NodeId id : order) {
          try {
            s.resolve_leaf(id);
            ++wins;
          } catch (const DoubleAssignment&) {
            ++losses;
          }
        }
      });
    }
    for (auto& th : threads) th.join();
    EXPECT_EQ(wins.load(), 16);
    EXPECT_EQ(losses.load(), 48);
  }
}

TEST(NodeStore, FilenameOfRequiresFile) {
  Types T;
  NodeStore s("/tmp/run/data");
  NodeId v = s.create(T.volume, "x");
  EXPECT_EQ(s.filename_of(s.field(v, "hdr")), "/tmp/run/data/x.hdr");
  EXPECT_EQ(s.filename_of(s.field(v, "hdr")), s.filename_of(s.field(v, "hdr")));
  EXPECT_THROW(s.filename_of(v), NotAFile);
}

TEST(NodeStore, SanitizeStaysInside) {
  EXPECT_EQ(NodeStore::sanitize("/2:fmri_wf/yroRun.v[3]"), "2_fmri_wf__yroRun.v_3_");
  EXPECT_EQ(NodeStore::sanitize("../x").find(".."), std::string::npos);
}

TEST(FsMapper, TwoVolumes) {
  Types T;
  TempDir d;
  for (auto f : {"bold1_001.img", "bold1_001.hdr", "bold1_002.img", "bold1_002.hdr", "sbold1_0000.hdr"})
    d.write(f, f);
  auto reg = MapperRegistry::with_builtins();
  NodeStore s;
  NodeId r = map_dataset(s, reg, desc("fs_mapper", {{"location", d.path().string()}, {"prefix", "bold1"}}), T.run,
                         MapMode::input, "bold1");
  EXPECT_TRUE(s.resolved(r));
  auto elems = s.elements(s.field(r, "v"));
  ASSERT_EQ(elems.size(), 2u);
  EXPECT_EQ(s.filename_of(s.field(elems[0].second, "img")), (d / "bold1_001.img").string());
  EXPECT_EQ(s.filename_of(s.field(elems[1].second, "hdr")), (d / "bold1_002.hdr").string());
  EXPECT_TRUE(tree_matches(s, r, *T.run));
}

TEST(FsMapper, EmptyDirectory) {
  Types T;
  TempDir d;
  auto reg = MapperRegistry::with_builtins();
  NodeStore s;
  NodeId r = map_dataset(s, reg, desc("run_mapper", {{"location", d.path().string()}, {"prefix", "bold1"}}), T.run,
                         MapMode::input, "bold1");
  EXPECT_TRUE(s.resolved(r));
  EXPECT_TRUE(s.closed(s.field(r, "v")));
  EXPECT_TRUE(s.elements(s.field(r, "v")).empty());
}

TEST(FsMapper, Grouping) {
  Types T;
  TempDir d;
  d.write("a_1.img", "");
  d.write("a_1.hdr", "");
  d.write("ab_1.img", "");
  FsMapper m;
  auto g = m.enumerate(desc("fs_mapper", {{"location", d.path().string()}, {"prefix", "a"}}), *T.run);
  ASSERT_EQ(g.children.at(0).children.size(), 1u);
  d.write("a_2.img", "");
  try {
    m.enumerate(desc("fs_mapper", {{"location", d.path().string()}, {"prefix", "a"}}), *T.run);
    FAIL();
  } catch (const IncompleteGroup& e) {
    EXPECT_EQ(e.stem(), "a_2");
  }
}

TEST(FsMapper, SortedAndDeterministic) {
  Types T;
  TempDir d;
  std::vector<int> ids(120);
  std::iota(ids.begin(), ids.end(), 1);
  std::shuffle(ids.begin(), ids.end(), std::mt19937(7));
  for (int i : ids) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "bold1_%03d", i);
    d.write(std::string(stem) + ".img", stem);
    d.write(std::string(stem) + ".hdr", stem);
  }
  FsMapper m;
  auto a = m.enumerate(desc("fs_mapper", {{"location", d.path().string()}, {"prefix", "bold1"}}), *T.run);
  auto b = m.enumerate(desc("fs_mapper", {{"location", d.path().string()}, {"prefix", "bold1"}}), *T.run);
  const auto& vols = a.children[0].children;
  ASSERT_EQ(vols.size(), 120u);
  for (std::size_t i = 1; i < vols.size(); ++i) EXPECT_LT(vols[i - 1].children[0].value, vols[i].children[0].value);
  for (std::size_t i = 0; i < vols.size(); ++i)
    EXPECT_EQ(vols[i].children[1].value, b.children[0].children[i].children[1].value);
}

TEST(FsMapper, OutputPaths) {
  Types T;
  TempDir d;
  auto reg = MapperRegistry::with_builtins();
  NodeStore s;
  auto loc = (d / "out").string();
  NodeId r = map_dataset(s, reg, desc("run_mapper", {{"location", loc}, {"prefix", "sbold1"}}), T.run,
                         MapMode::output, "sbold1");
  EXPECT_FALSE(s.terminal(r));
  NodeId e0 = s.element(s.field(r, "v"), 0);
  EXPECT_EQ(s.filename_of(s.field(e0, "hdr")), (std::filesystem::path(loc) / "sbold1_0000.hdr").string());
  NodeId e12 = s.element(s.field(r, "v"), 12);
  EXPECT_EQ(s.filename_of(s.field(e12, "img")), (std::filesystem::path(loc) / "sbold1_0012.img").string());
  EXPECT_FALSE(std::filesystem::exists(loc));
}

TEST(CsvMapper, OverlapTable) {
  Types T;
  auto reg = MapperRegistry::with_builtins();
  NodeStore s;
  auto table = (kFixtures / "montage" / "overlaps.tbl").string();
  NodeId diffs = map_dataset(
      s, reg, desc("csv_mapper", {{"file", table}, {"skip", "1"}, {"header", "true"}, {"hdelim", "|"}}),
      LogicalType::array_of(T.diff), MapMode::input, "diffs");
  auto rows = s.elements(diffs);
  ASSERT_EQ(rows.size(), 11u);
  NodeId r0 = rows[0].second;
  EXPECT_EQ(s.value(s.field(r0, "cntr1")), "0");
  EXPECT_EQ(s.value(s.field(r0, "cntr2")), "91");
  EXPECT_EQ(std::filesystem::path(s.value(s.field(r0, "diff"))).filename(), "diff.000000.000091.fits");
  EXPECT_EQ(std::filesystem::path(s.value(s.field(r0, "diff"))).parent_path(),
            std::filesystem::path(table).parent_path());
  bool found = false;
  for (auto [i, row] : rows) {
    if (s.value(s.field(row, "cntr1")) == "2" && s.value(s.field(row, "cntr2")) == "739") {
      found = true;
      EXPECT_EQ(std::filesystem::path(s.value(s.field(row, "minus"))).filename(), "p_980415s-j0630257.fits");
    }
  }
  EXPECT_TRUE(found);
  EXPECT_TRUE(s.resolved(diffs));
}

TEST(CsvMapper, RowCountFormula) {
  Types T;
  TempDir d;
  std::string body = "cntr1|cntr2|plus|minus|diff\n";
  for (int i = 0; i < 9; ++i) body += std::to_string(i) + "|1|a|b|c\n";
  d.write("t.csv", body);
  CsvMapper m;
  for (int skip = 0; skip <= 10; ++skip) {
    auto out = m.enumerate(desc("csv_mapper", {{"file", (d / "t.csv").string()},
                                               {"skip", std::to_string(skip)},
                                               {"header", "true"},
                                               {"hdelim", "|"}}),
                           *LogicalType::array_of(T.diff));
    EXPECT_EQ(out.children.size(), static_cast<std::size_t>(std::max(0, 10 - skip - 1)));
  }
}

TEST(CsvMapper, Errors) {
  Types T;
  TempDir d;
  d.write("short.txt", "1 2 a b c\n1 2 a b\n");
  d.write("bad.txt", "1 x a b c\n");
  CsvMapper m;
  try {
    m.enumerate(desc("csv_mapper", {{"file", (d / "short.txt").string()}}), *LogicalType::array_of(T.diff));
    FAIL();
  } catch (const RowArityMismatch& e) {
    EXPECT_EQ(e.line(), 2);
  }
  try {
    m.enumerate(desc("csv_mapper", {{"file", (d / "bad.txt").string()}}), *LogicalType::array_of(T.diff));
    FAIL();
  } catch (const FieldParseError& e) {
    EXPECT_EQ(e.line(), 1);
    EXPECT_EQ(e.column(), 2);
  }
}

TEST(Registry, RegisterAliasAndDuplicates) {
  auto reg = MapperRegistry::with_builtins();
  EXPECT_EQ(reg.canonical("run_mapper"), "fs_mapper");
  EXPECT_EQ(reg.find("run_mapper"), reg.find("fs_mapper"));
  EXPECT_THROW(reg.register_mapper("csv_mapper", std::make_shared<CsvMapper>()), DuplicateMapper);
  EXPECT_THROW(reg.find("nope"), UnknownMapper);
  reg.register_mapper("my_mapper", std::make_shared<StringMapper>());
  NodeStore s;
  NodeId x = map_dataset(s, reg, desc("my_mapper", {{"value", "42"}}), LogicalType::primitive("int"),
                         MapMode::input, "x");
  EXPECT_EQ(s.value(x), "42");
}

TEST(Mapping, ShapeMismatchIsReported) {
  Types T;
  auto reg = MapperRegistry::with_builtins();
  EXPECT_THROW(map_input(reg, desc("file_mapper", {{"file", "/etc/hostname"}}), *T.volume), MappingError);
  EXPECT_THROW(map_input(reg, desc("csv_mapper", {{"file", "x"}}), *T.image), MappingError);
  NodeStore s;
  NodeId v = s.create(T.volume, "v");
  EXPECT_THROW(s.bind(v, Mapped::leaf("x")), ShapeMismatch);
}

TEST(Mapping, RandomShapesRoundTrip) {
  // Random types, random value trees built from the type: binding always
  // yields a resolved node tree of the declared shape.
  std::mt19937 rng(11);
  std::function<TypePtr(int)> gen = [&](int depth) -> TypePtr {
    int k = depth > 2 ? static_cast<int>(rng() % 2) : static_cast<int>(rng() % 4);
    if (k == 0) return LogicalType::primitive("int");
    if (k == 1) return LogicalType::file("F");
    if (k == 2) return LogicalType::array_of(gen(depth + 1));
    auto t = std::make_shared<LogicalType>();
    t->kind = LogicalType::Kind::structure;
    t->name = "S" + std::to_string(rng() % 1000);
    int n = 1 + static_cast<int>(rng() % 3);
    for (int i = 0; i < n; ++i) t->fields.push_back({"f" + std::to_string(i), gen(depth + 1)});
    return t;
  };
  std::function<Mapped(const LogicalType&)> fill = [&](const LogicalType& t) {
    if (t.is_primitive() || t.is_file()) return Mapped::leaf("7");
    Mapped m{t.is_array() ? Mapped::Kind::array : Mapped::Kind::structure, {}, {}};
    if (t.is_array()) {
      int n = static_cast<int>(rng() % 4);
      for (int i = 0; i < n; ++i) m.children.push_back(fill(*t.element));
    } else {
      for (const auto& f : t.fields) m.children.push_back(fill(*f.type));
    }
    return m;
  };
  for (int i = 0; i < 200; ++i) {
    auto t = gen(0);
    auto m = fill(*t);
    ASSERT_TRUE(shape_matches(m, *t));
    NodeStore s;
    NodeId id = s.create(t, "x");
    s.bind(id, m);
    EXPECT_TRUE(s.resolved(id)) << t->display();
    EXPECT_TRUE(tree_matches(s, id, *t));
  }
}
