#include "subswap/cli.hpp"

int main(int argc, char** argv) { return subswap::dispatch(argc, argv); }
