#pragma once

namespace dm {

// Exit codes: 0 success, 1 training or data error, 2 usage or config error.
int cli_main(int argc, char** argv);

}  // namespace dm
