#include "styleadv/workbench.hpp"

int main(int argc, char** argv) { return styleadv::workbench::run_cli(argc, argv); }
