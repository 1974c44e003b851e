#pragma once

namespace dflow {

// full command-line driver: parses argv, runs the selected subcommand, writes
// manifest.json and summary.json into the output directory.  Returns the
// process exit code: 0 success, 2 configuration error, 3 runtime failure.
int cli_main(int argc, const char* const* argv);

}  // namespace dflow
