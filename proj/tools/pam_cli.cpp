#include <iostream>

#include "pam/cli.hpp"

int main(int argc, char** argv)
{
    return pam::run_cli(argc, argv, std::cout, std::cerr);
}
