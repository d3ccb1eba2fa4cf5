// SPDX-License-Identifier: Apache-2.0
#include "gld/commands.hpp"

int main(int argc, char** argv) { return gld::run_cli(argc, argv); }
