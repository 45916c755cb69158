#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace miniswift::bench {

namespace fs = std::filesystem;

// A generated workflow: script text plus the input files it maps, laid out
// under `dir`.
struct Workload {
  std::string kind;
  fs::path dir;
  fs::path script;
  std::size_t expected_tasks = 0;
};

inline void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
}

inline std::string numbered(const std::string& prefix, std::size_t i, const std::string& suffix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu", i);
  return prefix + buf + suffix;
}

inline std::size_t fmri_tasks(std::size_t volumes) { return 4 * volumes; }
inline std::size_t moldyn_tasks(std::size_t molecules) { return 1 + 84 * molecules; }

inline const char* kFmriScript = R"(type Image {}
type Header {}
type Volume { Image img; Header hdr; }
type Run { Volume v[]; }
type Air {}
type AirVector { Air a[]; }

(Volume ov) reorient (Volume iv, string direction, string overwrite)
{
  app { reorient @filename(iv.hdr) @filename(ov.hdr) direction overwrite; }
}

(Run or) reorientRun (Run ir, string direction, string overwrite)
{
  foreach Volume iv, i in ir.v {
    or.v[i] = reorient(iv, direction, overwrite);
  }
}

(Air out) alignlinear (Volume ref, Volume iv, int model, int t1, int t2, string params)
{
  app { alignlinear @filename(ref.img) @filename(iv.img) @filename(out) model t1 t2 params; }
}

(AirVector av) alignlinearRun (Volume ref, Run ir, int model, int t1, int t2, string params)
{
  foreach Volume iv, i in ir.v {
    av.a[i] = alignlinear(ref, iv, model, t1, t2, params);
  }
}

(Volume ov) reslice (Volume iv, Air xform, string o, string k)
{
  app { reslice @filename(xform) @filename(iv.hdr) @filename(ov.hdr) o k; }
}

(Run or) resliceRun (Run ir, AirVector av, string o, string k)
{
  foreach Volume iv, i in ir.v {
    or.v[i] = reslice(iv, av.a[i], o, k);
  }
}

(Run resliced) fmri_wf (Run r)
{
  Run yroRun = reorientRun(r, "y", "n");
  Run roRun = reorientRun(yroRun, "x", "n");
  Volume std = roRun.v[0];
  AirVector roAirVec = alignlinearRun(std, roRun, 12, 1000, 1000, "81 3 3");
  resliced = resliceRun(roRun, roAirVec, "-o", "-k");
}

Run bold<run_mapper; location="input/", prefix="vol">;
Run sbold<run_mapper; location="out/", prefix="svol">;
sbold = fmri_wf(bold);
)";

inline void add_fmri_volume(const fs::path& dir, std::size_t i) {
  write_file(dir / "input" / numbered("vol", i, ".img"), "image " + std::to_string(i) + "\n");
  write_file(dir / "input" / numbered("vol", i, ".hdr"), "header " + std::to_string(i) + "\n");
}

// Four stages over `volumes` input volumes: 4V tasks.
inline Workload fmri_like(const fs::path& dir, std::size_t volumes) {
  Workload w{"fmri-like", dir, dir / "fmri.sws", fmri_tasks(volumes)};
  write_file(w.script, kFmriScript);
  fs::create_directories(dir / "input");
  for (std::size_t i = 0; i < volumes; ++i) add_fmri_volume(dir, i);
  return w;
}

inline const char* kMoldynScript = R"(type File {}
type Lambda { float value; }
type Window { int id; }

(File o) prepare_db (File seed) { app { prepare_db @filename(seed) @filename(o); } }
(File o) antechamber (File mol, File db) { app { antechamber @filename(mol) @filename(db) @filename(o); } }
(File o) charmm_prep (File a) { app { charmm_prep @filename(a) @filename(o); } }
(File o) fe_run (File p, float lambda) { app { fe_run @filename(p) @filename(o) lambda; } }
(File o) fe_merge (File parts[]) { app { fe_merge @filename(o); } }
(File o) refine (File m, int w) { app { refine @filename(m) @filename(o) w; } }
(File o) summarize (File rs[]) { app { summarize @filename(o); } }

(File result) molecule (File mol, File db, Lambda ls[], Window ws[])
{
  File a = antechamber(mol, db);
  File p = charmm_prep(a);
  File fe[];
  foreach l, i in ls {
    fe[i] = fe_run(p, l.value);
  }
  File m = fe_merge(fe);
  File rs[];
  foreach w, j in ws {
    rs[j] = refine(m, w.id);
  }
  result = summarize(rs);
}

File seed<file_mapper; file="seed.dat">;
File db = prepare_db(seed);
File mols[]<fs_mapper; location="mols/", prefix="mol", suffix=".pdb">;
Lambda ls[]<csv_mapper; file="lambdas.csv", header=true>;
Window ws[]<csv_mapper; file="windows.csv", header=true>;
File results[];
foreach m, i in mols {
  results[i] = molecule(m, db, ls, ws);
}
)";

// One shared preparation task, then 84 tasks per molecule: 2 preparation
// steps, 68 free-energy windows, a merge, 12 refinements and a summary.
inline Workload moldyn_like(const fs::path& dir, std::size_t molecules) {
  Workload w{"moldyn-like", dir, dir / "moldyn.sws", moldyn_tasks(molecules)};
  write_file(w.script, kMoldynScript);
  write_file(dir / "seed.dat", "seed\n");
  std::string lambdas = "value\n";
  for (int i = 0; i < 68; ++i) lambdas += std::to_string(i / 67.0) + "\n";
  write_file(dir / "lambdas.csv", lambdas);
  std::string windows = "id\n";
  for (int i = 0; i < 12; ++i) windows += std::to_string(i) + "\n";
  write_file(dir / "windows.csv", windows);
  fs::create_directories(dir / "mols");
  for (std::size_t i = 0; i < molecules; ++i)
    write_file(dir / "mols" / numbered("mol", i, ".pdb"), "molecule " + std::to_string(i) + "\n");
  return w;
}

inline const char* kMontageScript = R"(type Image {}
type DiffStruct { int cntr1; int cntr2; Image plus; Image minus; Image diff; }

(Image d) mDiffFit (Image a, Image b)
{
  app { mDiffFit @filename(a) @filename(b) @filename(d); }
}

DiffStruct diffs[]<csv_mapper; file="overlaps.tbl", header=true, skip=1>;
Image fits[]<fs_mapper; location="out/", prefix="diff", suffix=".fits">;
foreach d, i in diffs {
  fits[i] = mDiffFit(d.plus, d.minus);
}
)";

// Overlap table with one row per image pair (i, i+1): `overlaps` tasks.
inline Workload montage_like(const fs::path& dir, std::size_t overlaps) {
  Workload w{"montage-like", dir, dir / "montage.sws", overlaps};
  write_file(w.script, kMontageScript);
  std::string tbl = "cntr1 cntr2 plus minus diff\nint int char char char\n";
  for (std::size_t i = 0; i < overlaps; ++i) {
    std::string a = numbered("img/p", i, ".fits"), b = numbered("img/p", i + 1, ".fits");
    tbl += std::to_string(i) + " " + std::to_string(i + 1) + " " + a + " " + b + " " + numbered("diff", i, ".fits") + "\n";
  }
  for (std::size_t i = 0; i <= overlaps; ++i)
    write_file(dir / numbered("img/p", i, ".fits"), "pixels " + std::to_string(i) + "\n");
  write_file(dir / "overlaps.tbl", tbl);
  return w;
}

inline const char* kFlatScript = R"(type File {}
type Row { int id; }

(File o) noop (int id) { app { noop id; } }

Row rows[]<csv_mapper; file="rows.csv", header=true>;
File outs[];
foreach r, i in rows {
  outs[i] = noop(r.id);
}
)";

// N independent tasks.
inline Workload flat(const fs::path& dir, std::size_t n) {
  Workload w{"flat", dir, dir / "flat.sws", n};
  write_file(w.script, kFlatScript);
  std::string rows = "id\n";
  rows.reserve(8 * n + 3);
  for (std::size_t i = 0; i < n; ++i) {
    rows += std::to_string(i);
    rows += '\n';
  }
  write_file(dir / "rows.csv", rows);
  return w;
}

}  // namespace miniswift::bench
