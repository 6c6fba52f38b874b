// Frozen golden render hashes; produced once by the reference render.
const GOLDEN_HASHES: [&str; 8] = [
    "6754814961a297986475b3ab4ca7e0dee7b84afa975a9774985550e9529f91e0",
    "b1d30d940b6d4a18bec7f8a1814f0049aa791439e46155fa9224c69e7879de2f",
    "44355ecf9c2cf824cd7c8aeffb7b449675b2650f80923da543637a90ec13d68e",
    "474c22dfa17a3b80e228bd1de791a86d2ba52d85a933c136e26eee1caab45f9e",
    "e1690e3139a13cc6270af0b3c99f8aaaf4035d6e7f77300d79bd96922bcb4414",
    "aaf6743d78c34b0903062b46b9aea99f8ae571dfb202c21f211d707d8229482a",
    "be8550615151e0d26652565f0c75dcfc56045b6746b52b0e59e9225cf9b2bbd2",
    "4ad87becd85b72d82df4ccbac97908a4276d0d326cae35a0f7df34f6d3a2bb4a",
];
