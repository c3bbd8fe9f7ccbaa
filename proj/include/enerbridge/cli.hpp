#pragma once

namespace enerbridge {

/// Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numerical.
int run_cli(int argc, char** argv);

}  // namespace enerbridge
