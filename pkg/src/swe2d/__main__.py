from swe2d.harness import main

main()
