#pragma once
// Command-line front end: simulate / train-score / sample / reconstruct /
// evaluate / sweep. Every command resolves its configuration (file plus flag
// overrides), writes its artifacts under one output directory, and finishes
// with a manifest.json recording the resolved configuration and content
// hashes of all inputs and outputs.
//
// Exit codes: 0 success (including --help), 1 usage or configuration errors,
// 2 runtime failures.

namespace petsgm {

int run_cli(int argc, const char* const* argv);

} // namespace petsgm
